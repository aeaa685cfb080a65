// SPDX-License-Identifier: Apache-2.0
//
// Dataset plumbing: stratified splits, PNG + CSV serialization, and the
// tumor-scarcity subsampling rule shared by the training and evaluation
// pipelines.
#pragma once

#include <array>
#include <string>
#include <vector>

#include "phantom.hpp"

namespace saggan {

struct ManifestRow {
  std::string id;
  std::string image_path;  // relative to the dataset root
  std::string mask_path;   // empty for normal samples
  Domain domain = Domain::normal;
  int label = 0;
  std::string split;  // "train" | "val" | "test"
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;
};

// Assigns splits in place (stratified by label, deterministic given seed) and
// returns the manifest with relative file paths. Counts per class are
// round(ratio*n) for val and test with the remainder going to train.
DatasetManifest split_dataset(std::vector<SampleRecord>& records,
                              std::array<double, 3> ratios, uint64_t seed);

inline DatasetManifest split_dataset(std::vector<SampleRecord>& records, uint64_t seed) {
  return split_dataset(records, {0.70, 0.20, 0.10}, seed);
}

// Writes <dir>/images/*.png, <dir>/masks/*.png and <dir>/manifest.csv.
void save_dataset(const std::vector<SampleRecord>& records, const DatasetManifest& manifest,
                  const std::string& dir);

// Inverse of save_dataset up to 8-bit quantization of the images.
std::vector<SampleRecord> load_dataset(const std::string& dir);

// Keeps every record except train-split tumor samples, of which only the
// lexicographically first round(keep_fraction * count) ids survive. Both the
// GAN trainer and the experiment runner call this, so the scarce subset is
// identical across pipeline stages without extra bookkeeping.
std::vector<SampleRecord> apply_tumor_scarcity(const std::vector<SampleRecord>& records,
                                               double keep_fraction);

}  // namespace saggan

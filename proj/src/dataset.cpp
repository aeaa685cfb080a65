// SPDX-License-Identifier: Apache-2.0
#include "dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "pngio.hpp"

namespace fs = std::filesystem;

namespace saggan {

DatasetManifest split_dataset(std::vector<SampleRecord>& records, std::array<double, 3> ratios,
                              uint64_t seed) {
  const double sum = ratios[0] + ratios[1] + ratios[2];
  SAGGAN_CHECK(std::abs(sum - 1.0) <= 1e-9, "split_dataset: ratios sum to %.12g, expected 1",
               sum);
  SAGGAN_CHECK(ratios[0] >= 0 && ratios[1] >= 0 && ratios[2] >= 0,
               "split_dataset: ratios must be non-negative");

  std::map<int, std::vector<size_t>> by_label;
  for (size_t i = 0; i < records.size(); ++i) by_label[records[i].label].push_back(i);
  for (const auto& [label, idx] : by_label)
    SAGGAN_CHECK(idx.size() >= 10,
                 "split_dataset: class %d has only %zu samples, need at least 10", label,
                 idx.size());

  for (auto& [label, idx] : by_label) {
    Rng rng(derive_seed(seed, strfmt("split-%d", label)));
    rng.shuffle(idx);
    const int64_t n = static_cast<int64_t>(idx.size());
    const int64_t n_val = std::llround(ratios[1] * static_cast<double>(n));
    const int64_t n_test = std::llround(ratios[2] * static_cast<double>(n));
    const int64_t n_train = n - n_val - n_test;
    SAGGAN_CHECK(n_train >= 0, "split_dataset: val+test ratios leave no training data");
    for (int64_t k = 0; k < n; ++k) {
      records[idx[static_cast<size_t>(k)]].split =
          k < n_train ? "train" : (k < n_train + n_val ? "val" : "test");
    }
  }

  DatasetManifest m;
  m.rows.reserve(records.size());
  for (const auto& rec : records) {
    ManifestRow row;
    row.id = rec.id;
    row.image_path = "images/" + rec.id + ".png";
    if (rec.domain == Domain::tumor) row.mask_path = "masks/" + rec.id + ".png";
    row.domain = rec.domain;
    row.label = rec.label;
    row.split = rec.split;
    m.rows.push_back(std::move(row));
  }
  return m;
}

void save_dataset(const std::vector<SampleRecord>& records, const DatasetManifest& manifest,
                  const std::string& dir) {
  SAGGAN_CHECK(records.size() == manifest.rows.size(),
               "save_dataset: %zu records but %zu manifest rows", records.size(),
               manifest.rows.size());
  fs::create_directories(fs::path(dir) / "images");
  bool any_mask = false;
  for (const auto& row : manifest.rows) any_mask |= !row.mask_path.empty();
  if (any_mask) fs::create_directories(fs::path(dir) / "masks");

  for (size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    const auto& row = manifest.rows[i];
    SAGGAN_CHECK(rec.id == row.id, "save_dataset: record/manifest id mismatch at row %zu (%s vs %s)",
                 i, rec.id.c_str(), row.id.c_str());
    save_image_png((fs::path(dir) / row.image_path).string(), rec.image);
    if (!row.mask_path.empty())
      save_mask_png((fs::path(dir) / row.mask_path).string(), rec.mask);
  }

  std::ofstream csv(fs::path(dir) / "manifest.csv", std::ios::binary);
  SAGGAN_CHECK(csv.good(), "save_dataset: cannot open %s/manifest.csv for writing",
               dir.c_str());
  csv << "id,image,mask,domain,label,split\n";
  for (const auto& row : manifest.rows) {
    csv << row.id << ',' << row.image_path << ',' << row.mask_path << ','
        << domain_name(row.domain) << ',' << row.label << ',' << row.split << '\n';
  }
  csv.close();
  SAGGAN_CHECK(csv.good(), "save_dataset: failed writing %s/manifest.csv", dir.c_str());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

std::vector<SampleRecord> load_dataset(const std::string& dir) {
  const fs::path csv_path = fs::path(dir) / "manifest.csv";
  std::ifstream csv(csv_path, std::ios::binary);
  if (!csv.good())
    throw std::runtime_error(strfmt("load_dataset: missing manifest %s", csv_path.c_str()));

  std::string line;
  SAGGAN_CHECK(static_cast<bool>(std::getline(csv, line)), "load_dataset: %s is empty",
               csv_path.c_str());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  SAGGAN_CHECK(line == "id,image,mask,domain,label,split",
               "load_dataset: unexpected manifest header '%s'", line.c_str());

  std::vector<SampleRecord> out;
  std::set<std::string> seen_ids;
  int line_no = 1;
  while (std::getline(csv, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    SAGGAN_CHECK(f.size() == 6, "load_dataset: line %d has %zu fields, expected 6", line_no,
                 f.size());
    SampleRecord rec;
    rec.id = f[0];
    SAGGAN_CHECK(!rec.id.empty(), "load_dataset: empty id at line %d", line_no);
    SAGGAN_CHECK(seen_ids.insert(rec.id).second, "load_dataset: duplicate id %s at line %d",
                 rec.id.c_str(), line_no);
    if (f[3] == "normal")
      rec.domain = Domain::normal;
    else if (f[3] == "tumor")
      rec.domain = Domain::tumor;
    else
      throw ValidationError(
          strfmt("load_dataset: unknown domain '%s' at line %d", f[3].c_str(), line_no));
    SAGGAN_CHECK(f[4] == "0" || f[4] == "1", "load_dataset: invalid label '%s' at line %d",
                 f[4].c_str(), line_no);
    rec.label = f[4] == "1" ? 1 : 0;
    SAGGAN_CHECK((rec.domain == Domain::tumor) == (rec.label == 1),
                 "load_dataset: domain/label mismatch for %s at line %d", rec.id.c_str(),
                 line_no);
    SAGGAN_CHECK(f[5] == "train" || f[5] == "val" || f[5] == "test",
                 "load_dataset: invalid split '%s' at line %d", f[5].c_str(), line_no);
    rec.split = f[5];
    SAGGAN_CHECK((rec.domain == Domain::tumor) == !f[2].empty(),
                 "load_dataset: mask path %s for %s at line %d",
                 rec.domain == Domain::tumor ? "missing" : "unexpected", rec.id.c_str(),
                 line_no);

    const fs::path img_path = fs::path(dir) / f[1];
    if (!fs::exists(img_path))
      throw std::runtime_error(strfmt("load_dataset: id %s references missing image %s",
                                      rec.id.c_str(), img_path.c_str()));
    rec.image = load_image_png(img_path.string());
    if (!f[2].empty()) {
      const fs::path mask_path = fs::path(dir) / f[2];
      if (!fs::exists(mask_path))
        throw std::runtime_error(strfmt("load_dataset: id %s references missing mask %s",
                                        rec.id.c_str(), mask_path.c_str()));
      rec.mask = load_mask_png(mask_path.string());
      check_same_shape(rec.image, rec.mask, "load_dataset image/mask");
      bool any = false;
      for (int64_t i = 0; i < rec.mask.size() && !any; ++i) any = rec.mask[i] == 1.0f;
      SAGGAN_CHECK(any, "load_dataset: mask for %s has no positive pixel", rec.id.c_str());
    }
    out.push_back(std::move(rec));
  }
  SAGGAN_CHECK(!out.empty(), "load_dataset: %s lists no samples", csv_path.c_str());
  return out;
}

std::vector<SampleRecord> apply_tumor_scarcity(const std::vector<SampleRecord>& records,
                                               double keep_fraction) {
  SAGGAN_CHECK(keep_fraction > 0.0 && keep_fraction <= 1.0,
               "apply_tumor_scarcity: keep_fraction %g outside (0,1]", keep_fraction);
  std::vector<std::string> train_tumor_ids;
  for (const auto& rec : records)
    if (rec.split == "train" && rec.domain == Domain::tumor) train_tumor_ids.push_back(rec.id);
  std::sort(train_tumor_ids.begin(), train_tumor_ids.end());
  const size_t keep = static_cast<size_t>(
      std::llround(keep_fraction * static_cast<double>(train_tumor_ids.size())));
  std::set<std::string> kept(train_tumor_ids.begin(),
                             train_tumor_ids.begin() +
                                 static_cast<std::ptrdiff_t>(std::min(keep, train_tumor_ids.size())));
  std::vector<SampleRecord> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    if (rec.split == "train" && rec.domain == Domain::tumor && !kept.count(rec.id)) continue;
    out.push_back(rec);
  }
  return out;
}

}  // namespace saggan

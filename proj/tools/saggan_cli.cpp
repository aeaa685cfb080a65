// SPDX-License-Identifier: Apache-2.0
//
// Pipeline driver: gen-data -> train-gan -> augment -> train-clf -> evaluate
// -> report, one config file plus CLI overrides, exit codes 0 (success),
// 1 (validation error), 2 (runtime failure).
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "augment.hpp"
#include "classifier.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "experiment.hpp"
#include "metrics.hpp"
#include "phantom.hpp"
#include "train.hpp"

namespace fs = std::filesystem;
using namespace saggan;

namespace {

constexpr const char* kVersion = "saggan 1.0.0";

std::string utc_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct CommonArgs {
  std::string config_path;
  int64_t seed_override = -1;
  std::string out_dir;
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg = args.config_path.empty() ? parse_config_json(nlohmann::json::object())
                                           : parse_config(args.config_path);
  if (args.seed_override >= 0) cfg.seed = static_cast<uint64_t>(args.seed_override);
  return cfg;
}

void write_run_json(const RunConfig& cfg, const std::string& subcommand,
                    const std::string& out_dir, const std::string& started_at,
                    const std::vector<std::string>& artifacts) {
  nlohmann::json j;
  j["config_hash"] = config_hash(cfg);
  j["seed"] = cfg.seed;
  j["subcommand"] = subcommand;
  j["started_at"] = started_at;
  j["artifact_paths"] = artifacts;
  j["version"] = kVersion;
  fs::create_directories(out_dir);
  std::ofstream out(fs::path(out_dir) / "run.json", std::ios::binary);
  SAGGAN_CHECK(out.good(), "cannot open %s/run.json", out_dir.c_str());
  out << j.dump(2) << "\n";
  out.close();
  SAGGAN_CHECK(out.good(), "failed writing %s/run.json", out_dir.c_str());
}

PhantomParams phantom_params_from(const DataConfig& d) {
  PhantomParams pp;
  pp.bumps_min = d.bumps_min;
  pp.bumps_max = d.bumps_max;
  pp.noise_amp = d.noise_amp;
  pp.lesion.amp_min = d.lesion_amp_min;
  pp.lesion.amp_max = d.lesion_amp_max;
  pp.lesion.radius_min_frac = d.lesion_radius_min;
  pp.lesion.radius_max_frac = d.lesion_radius_max;
  return pp;
}

int cmd_gen_data(const CommonArgs& args) {
  const std::string started = utc_now();
  RunConfig cfg = resolve_config(args);
  std::vector<SampleRecord> records =
      generate_phantom(cfg.seed, cfg.data.n_samples, cfg.data.image_size,
                       cfg.data.tumor_fraction, phantom_params_from(cfg.data));
  DatasetManifest manifest =
      split_dataset(records, cfg.data.split_ratios, derive_seed(cfg.seed, "split"));
  save_dataset(records, manifest, args.out_dir);
  write_run_json(cfg, "gen-data", args.out_dir, started,
                 {"manifest.csv", "images/", "masks/"});
  std::printf("gen-data: wrote %zu samples to %s\n", records.size(), args.out_dir.c_str());
  return 0;
}

// Training pool: the train split with the tumor-scarcity rule applied, so the
// GAN only ever sees the same scarce tumors the experiment arms work with.
std::vector<SampleRecord> scarce_train_split(const std::vector<SampleRecord>& dataset,
                                             const RunConfig& cfg) {
  std::vector<SampleRecord> out;
  for (auto& rec : apply_tumor_scarcity(dataset, cfg.experiment.tumor_keep_fraction))
    if (rec.split == "train") out.push_back(std::move(rec));
  return out;
}

int cmd_train_gan(const CommonArgs& args, const std::string& data_dir,
                  const std::string& resume_dir, bool allow_hash_mismatch) {
  const std::string started = utc_now();
  RunConfig cfg = resolve_config(args);
  std::vector<SampleRecord> dataset = load_dataset(data_dir);
  Trainer trainer(cfg);
  if (!resume_dir.empty()) trainer.load(resume_dir, allow_hash_mismatch);
  trainer.train(scarce_train_split(dataset, cfg), args.out_dir);
  write_run_json(cfg, "train-gan", args.out_dir, started, {"history.csv", "checkpoint/"});
  std::printf("train-gan: finished %lld epochs, checkpoint in %s/checkpoint\n",
              static_cast<long long>(trainer.completed_epochs()), args.out_dir.c_str());
  return 0;
}

int cmd_augment(const CommonArgs& args, const std::string& data_dir,
                const std::string& checkpoint_dir, bool allow_hash_mismatch) {
  const std::string started = utc_now();
  RunConfig cfg = resolve_config(args);
  if (checkpoint_dir.empty())
    throw ValidationError("augment: --gan-checkpoint is required");
  std::vector<SampleRecord> dataset = load_dataset(data_dir);
  Trainer trainer(cfg);
  trainer.load(checkpoint_dir, allow_hash_mismatch);

  std::vector<Tensor<float>> normals;
  for (const auto& rec : dataset)
    if (rec.split == "train" && rec.domain == Domain::normal) normals.push_back(rec.image);
  SAGGAN_CHECK(!normals.empty(), "augment: no normal training samples in %s",
               data_dir.c_str());

  std::vector<SynthesizedSample> synth =
      synthesize_augmented(normals, trainer.models(), cfg.gan.mask_threshold);
  std::vector<SampleRecord> records;
  records.reserve(synth.size());
  for (size_t i = 0; i < synth.size(); ++i) {
    SampleRecord rec;
    rec.id = strfmt("syn%04zu", i);
    rec.image = std::move(synth[i].image);
    rec.mask = std::move(synth[i].mask);
    rec.domain = Domain::tumor;
    rec.label = 1;
    rec.split = "train";
    records.push_back(std::move(rec));
  }
  DatasetManifest manifest;
  for (const auto& rec : records) {
    ManifestRow row;
    row.id = rec.id;
    row.image_path = "images/" + rec.id + ".png";
    row.mask_path = "masks/" + rec.id + ".png";
    row.domain = rec.domain;
    row.label = rec.label;
    row.split = rec.split;
    manifest.rows.push_back(std::move(row));
  }
  save_dataset(records, manifest, args.out_dir);
  write_run_json(cfg, "augment", args.out_dir, started,
                 {"manifest.csv", "images/", "masks/"});
  std::printf("augment: synthesized %zu tumor samples into %s\n", records.size(),
              args.out_dir.c_str());
  return 0;
}

int cmd_train_clf(const CommonArgs& args, const std::string& data_dir) {
  const std::string started = utc_now();
  RunConfig cfg = resolve_config(args);
  std::vector<SampleRecord> dataset = load_dataset(data_dir);
  std::vector<Tensor<float>> train_images, val_images;
  std::vector<int> train_labels, val_labels;
  const int64_t image_size = dataset.front().image.shape.at(0);
  for (const auto& rec : dataset) {
    if (rec.split == "train") {
      train_images.push_back(rec.image);
      train_labels.push_back(rec.label);
    } else if (rec.split == "val") {
      val_images.push_back(rec.image);
      val_labels.push_back(rec.label);
    }
  }
  ClassifierTrainResult result = train_classifier(train_images, train_labels, val_images,
                                                  val_labels, cfg.classifier, cfg.seed,
                                                  image_size);
  nlohmann::json j;
  j["best_epoch"] = result.best_epoch;
  j["val_accuracy"] = result.best_val_accuracy;
  j["parameters"] = result.net.param_count();
  fs::create_directories(args.out_dir);
  std::ofstream out(fs::path(args.out_dir) / "classifier.json", std::ios::binary);
  SAGGAN_CHECK(out.good(), "cannot open %s/classifier.json", args.out_dir.c_str());
  out << j.dump(2) << "\n";
  out.close();
  write_run_json(cfg, "train-clf", args.out_dir, started, {"classifier.json"});
  std::printf("train-clf: best epoch %lld, val accuracy %.4f\n",
              static_cast<long long>(result.best_epoch), result.best_val_accuracy);
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& data_dir,
                 const std::string& checkpoint_dir, bool train_first,
                 bool allow_hash_mismatch) {
  const std::string started = utc_now();
  RunConfig cfg = resolve_config(args);
  std::vector<SampleRecord> dataset = load_dataset(data_dir);

  const bool wants_sag_gan =
      std::find(cfg.experiment.arms.begin(), cfg.experiment.arms.end(), "sag_gan") !=
      cfg.experiment.arms.end();
  Trainer trainer(cfg);
  const Models<float>* gan_models = nullptr;
  std::vector<std::string> artifacts{"report.csv", "report.json"};
  if (wants_sag_gan) {
    if (train_first) {
      trainer.train(scarce_train_split(dataset, cfg),
                    (fs::path(args.out_dir) / "gan").string());
      artifacts.push_back("gan/");
    } else if (!checkpoint_dir.empty()) {
      trainer.load(checkpoint_dir, allow_hash_mismatch);
    } else {
      throw ValidationError(
          "evaluate: the sag_gan arm needs --gan-checkpoint DIR or --train-first");
    }
    gan_models = &trainer.models();
  }
  ExperimentReport report = run_experiment(dataset, cfg, gan_models);
  write_report(report, args.out_dir);
  write_run_json(cfg, "evaluate", args.out_dir, started, artifacts);
  std::printf("evaluate: wrote %s/report.csv and report.json\n", args.out_dir.c_str());
  return 0;
}

int cmd_report(const CommonArgs& args, const std::string& report_path) {
  const std::string started = utc_now();
  RunConfig cfg = resolve_config(args);
  std::ifstream in(report_path, std::ios::binary);
  if (!in.good())
    throw std::runtime_error(strfmt("report: cannot open %s", report_path.c_str()));
  nlohmann::json j = nlohmann::json::parse(in);

  std::string table = strfmt("%-12s %10s %10s %10s %10s\n", "arm", "accuracy", "auc", "tpr",
                             "tnr");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key() == "config" || it.key() == "config_hash") continue;
    const auto& arm = it.value();
    table += strfmt("%-12s %10.4f %10.4f %10.4f %10.4f\n", it.key().c_str(),
                    arm.at("accuracy").get<double>(), arm.at("auc").get<double>(),
                    arm.at("tpr").get<double>(), arm.at("tnr").get<double>());
  }
  std::fputs(table.c_str(), stdout);
  if (!args.out_dir.empty()) {
    fs::create_directories(args.out_dir);
    std::ofstream out(fs::path(args.out_dir) / "table.txt", std::ios::binary);
    out << table;
    out.close();
    SAGGAN_CHECK(out.good(), "report: failed writing %s/table.txt", args.out_dir.c_str());
    write_run_json(cfg, "report", args.out_dir, started, {"table.txt"});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  saggan::tune_allocator_for_large_buffers();
  CLI::App app{"SAG-GAN lesion-image augmentation pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string data_dir, resume_dir, checkpoint_dir, report_path;
  bool allow_hash_mismatch = false, train_first = false;

  auto add_common = [&](CLI::App* sub, bool out_required = true) {
    sub->add_option("--config", args.config_path, "JSON config file (defaults when omitted)");
    sub->add_option("--seed", args.seed_override, "Seed override (wins over the config)")
        ->check(CLI::NonNegativeNumber);
    auto* out = sub->add_option("--out", args.out_dir, "Output directory");
    if (out_required) out->required();
  };

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the phantom dataset");
  add_common(gen);

  CLI::App* tg = app.add_subcommand("train-gan", "Train the attention-guided cycle GAN");
  add_common(tg);
  tg->add_option("--data", data_dir, "Dataset directory from gen-data")->required();
  tg->add_option("--resume", resume_dir, "Checkpoint directory to resume from");
  tg->add_flag("--allow-hash-mismatch", allow_hash_mismatch,
               "Proceed when the checkpoint was written under a different config");

  CLI::App* aug = app.add_subcommand("augment", "Synthesize tumor samples from normals");
  add_common(aug);
  aug->add_option("--data", data_dir, "Dataset directory")->required();
  aug->add_option("--gan-checkpoint", checkpoint_dir, "Trained checkpoint directory")
      ->required();
  aug->add_flag("--allow-hash-mismatch", allow_hash_mismatch,
                "Proceed when the checkpoint was written under a different config");

  CLI::App* clf = app.add_subcommand("train-clf", "Train the classifier on a dataset as-is");
  add_common(clf);
  clf->add_option("--data", data_dir, "Dataset directory")->required();

  CLI::App* ev = app.add_subcommand("evaluate", "Run the multi-arm augmentation experiment");
  add_common(ev);
  ev->add_option("--data", data_dir, "Dataset directory")->required();
  ev->add_option("--gan-checkpoint", checkpoint_dir,
                 "Trained checkpoint for the sag_gan arm");
  ev->add_flag("--train-first", train_first, "Train the GAN before evaluating");
  ev->add_flag("--allow-hash-mismatch", allow_hash_mismatch,
               "Proceed when the checkpoint was written under a different config");

  CLI::App* rep = app.add_subcommand("report", "Print a report.json as a table");
  add_common(rep, /*out_required=*/false);
  rep->add_option("--report", report_path, "Path to report.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage problems are validation errors
  }

  try {
    if (gen->parsed()) return cmd_gen_data(args);
    if (tg->parsed()) return cmd_train_gan(args, data_dir, resume_dir, allow_hash_mismatch);
    if (aug->parsed()) return cmd_augment(args, data_dir, checkpoint_dir, allow_hash_mismatch);
    if (clf->parsed()) return cmd_train_clf(args, data_dir);
    if (ev->parsed())
      return cmd_evaluate(args, data_dir, checkpoint_dir, train_first, allow_hash_mismatch);
    if (rep->parsed()) return cmd_report(args, report_path);
    std::fprintf(stderr, "error: no subcommand selected\n");
    return 1;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

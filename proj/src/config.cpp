// SPDX-License-Identifier: Apache-2.0
#include "config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace saggan {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const char* what) {
  throw ValidationError(strfmt("config: %s: %s", path.c_str(), what));
}

class Section {
 public:
  Section(const json& doc, std::string prefix) : doc_(doc), prefix_(std::move(prefix)) {
    if (!doc_.is_object()) throw ValidationError(strfmt("config: %s: expected an object",
                                                        prefix_.empty() ? "<root>" : prefix_.c_str()));
  }

  std::string path(const std::string& key) const {
    return prefix_.empty() ? key : prefix_ + "." + key;
  }

  const json* get(const std::string& key) {
    seen_.insert(key);
    auto it = doc_.find(key);
    return it == doc_.end() ? nullptr : &*it;
  }

  void integer(const std::string& key, int64_t& out) {
    const json* v = get(key);
    if (!v) return;
    if (!v->is_number_integer() && !v->is_number_unsigned())
      fail(path(key), "expected an integer");
    out = v->get<int64_t>();
  }

  void unsigned_int(const std::string& key, uint64_t& out) {
    const json* v = get(key);
    if (!v) return;
    if (!(v->is_number_unsigned() || (v->is_number_integer() && v->get<int64_t>() >= 0)))
      fail(path(key), "expected a non-negative integer");
    out = v->get<uint64_t>();
  }

  void real(const std::string& key, double& out) {
    const json* v = get(key);
    if (!v) return;
    if (!v->is_number()) fail(path(key), "expected a number");
    out = v->get<double>();
  }

  void boolean(const std::string& key, bool& out) {
    const json* v = get(key);
    if (!v) return;
    if (!v->is_boolean()) fail(path(key), "expected a boolean");
    out = v->get<bool>();
  }

  void string_list(const std::string& key, std::vector<std::string>& out) {
    const json* v = get(key);
    if (!v) return;
    if (!v->is_array()) fail(path(key), "expected an array of strings");
    std::vector<std::string> vals;
    for (const auto& e : *v) {
      if (!e.is_string()) fail(path(key), "expected an array of strings");
      vals.push_back(e.get<std::string>());
    }
    out = std::move(vals);
  }

  // call after consuming all known keys
  void finish() {
    for (auto it = doc_.begin(); it != doc_.end(); ++it)
      if (!seen_.count(it.key()))
        throw ValidationError(strfmt("config: unknown key %s", path(it.key()).c_str()));
  }

  const json& raw(const std::string& key) { return doc_.at(key); }
  bool has(const std::string& key) const { return doc_.contains(key); }

 private:
  const json& doc_;
  std::string prefix_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& path, const char* what) {
  if (!ok) fail(path, what);
}

}  // namespace

RunConfig parse_config_json(const json& doc) {
  RunConfig cfg;
  Section root(doc, "");
  root.unsigned_int("seed", cfg.seed);

  if (const json* d = root.get("data")) {
    Section s(*d, "data");
    s.integer("n_samples", cfg.data.n_samples);
    s.integer("image_size", cfg.data.image_size);
    s.real("tumor_fraction", cfg.data.tumor_fraction);
    s.integer("bumps_min", cfg.data.bumps_min);
    s.integer("bumps_max", cfg.data.bumps_max);
    s.real("noise_amp", cfg.data.noise_amp);
    s.real("lesion_amp_min", cfg.data.lesion_amp_min);
    s.real("lesion_amp_max", cfg.data.lesion_amp_max);
    s.real("lesion_radius_min", cfg.data.lesion_radius_min);
    s.real("lesion_radius_max", cfg.data.lesion_radius_max);
    s.real("split_train", cfg.data.split_ratios[0]);
    s.real("split_val", cfg.data.split_ratios[1]);
    s.real("split_test", cfg.data.split_ratios[2]);
    s.finish();
  }
  if (const json* g = root.get("gan")) {
    Section s(*g, "gan");
    s.integer("epochs", cfg.gan.epochs);
    s.integer("batch_size", cfg.gan.batch_size);
    s.real("learning_rate", cfg.gan.learning_rate);
    s.real("beta1", cfg.gan.beta1);
    s.real("beta2", cfg.gan.beta2);
    s.real("lambda_gan", cfg.gan.lambda_gan);
    s.real("lambda_cyc", cfg.gan.lambda_cyc);
    s.integer("image_size", cfg.gan.image_size);
    s.integer("blocks", cfg.gan.blocks);
    s.integer("checkpoint_every", cfg.gan.checkpoint_every);
    s.boolean("attention_supervision", cfg.gan.attention_supervision);
    s.real("mask_threshold", cfg.gan.mask_threshold);
    s.finish();
  }
  if (const json* c = root.get("classifier")) {
    Section s(*c, "classifier");
    s.integer("epochs", cfg.classifier.epochs);
    s.integer("batch_size", cfg.classifier.batch_size);
    s.real("learning_rate", cfg.classifier.learning_rate);
    s.real("beta1", cfg.classifier.beta1);
    s.real("beta2", cfg.classifier.beta2);
    s.finish();
  }
  if (const json* e = root.get("experiment")) {
    Section s(*e, "experiment");
    s.real("tumor_keep_fraction", cfg.experiment.tumor_keep_fraction);
    s.integer("n_seeds", cfg.experiment.n_seeds);
    s.string_list("arms", cfg.experiment.arms);
    s.finish();
  }
  root.finish();

  // constraints, each reported with its key path
  check(cfg.data.n_samples >= 1, "data.n_samples", "must be >= 1");
  check(cfg.data.image_size >= 32 && cfg.data.image_size % 4 == 0, "data.image_size",
        "must be >= 32 and divisible by 4");
  check(cfg.data.tumor_fraction >= 0.0 && cfg.data.tumor_fraction <= 1.0,
        "data.tumor_fraction", "must lie in [0,1]");
  check(cfg.data.bumps_min >= 1 && cfg.data.bumps_min <= cfg.data.bumps_max, "data.bumps_min",
        "must satisfy 1 <= bumps_min <= bumps_max");
  check(cfg.data.noise_amp >= 0.0, "data.noise_amp", "must be >= 0");
  check(cfg.data.lesion_amp_min > 0.0 && cfg.data.lesion_amp_min <= cfg.data.lesion_amp_max,
        "data.lesion_amp_min", "must satisfy 0 < amp_min <= amp_max");
  check(cfg.data.lesion_radius_min > 0.0 &&
            cfg.data.lesion_radius_min <= cfg.data.lesion_radius_max &&
            cfg.data.lesion_radius_max < 0.5,
        "data.lesion_radius_min", "must satisfy 0 < radius_min <= radius_max < 0.5");
  const double rsum =
      cfg.data.split_ratios[0] + cfg.data.split_ratios[1] + cfg.data.split_ratios[2];
  check(cfg.data.split_ratios[0] >= 0 && cfg.data.split_ratios[1] >= 0 &&
            cfg.data.split_ratios[2] >= 0 && std::abs(rsum - 1.0) <= 1e-9,
        "data.split_train", "split ratios must be non-negative and sum to 1");

  check(cfg.gan.epochs >= 1, "gan.epochs", "must be >= 1");
  check(cfg.gan.batch_size >= 1, "gan.batch_size", "must be >= 1");
  check(cfg.gan.learning_rate > 0.0, "gan.learning_rate", "must be > 0");
  check(cfg.gan.beta1 >= 0.0 && cfg.gan.beta1 < 1.0, "gan.beta1", "must lie in [0,1)");
  check(cfg.gan.beta2 >= 0.0 && cfg.gan.beta2 < 1.0, "gan.beta2", "must lie in [0,1)");
  check(cfg.gan.lambda_gan >= 0.0, "gan.lambda_gan", "must be >= 0");
  check(cfg.gan.lambda_cyc >= 0.0, "gan.lambda_cyc", "must be >= 0");
  check(cfg.gan.image_size >= 32 && cfg.gan.image_size % 4 == 0, "gan.image_size",
        "must be >= 32 and divisible by 4");
  check(cfg.gan.blocks >= 1, "gan.blocks", "must be >= 1");
  check(cfg.gan.checkpoint_every >= 1, "gan.checkpoint_every", "must be >= 1");
  check(cfg.gan.mask_threshold > 0.0 && cfg.gan.mask_threshold < 1.0, "gan.mask_threshold",
        "must lie in (0,1)");

  check(cfg.classifier.epochs >= 1, "classifier.epochs", "must be >= 1");
  check(cfg.classifier.batch_size >= 1, "classifier.batch_size", "must be >= 1");
  check(cfg.classifier.learning_rate > 0.0, "classifier.learning_rate", "must be > 0");
  check(cfg.classifier.beta1 >= 0.0 && cfg.classifier.beta1 < 1.0, "classifier.beta1",
        "must lie in [0,1)");
  check(cfg.classifier.beta2 >= 0.0 && cfg.classifier.beta2 < 1.0, "classifier.beta2",
        "must lie in [0,1)");

  check(cfg.experiment.tumor_keep_fraction > 0.0 && cfg.experiment.tumor_keep_fraction <= 1.0,
        "experiment.tumor_keep_fraction", "must lie in (0,1]");
  check(cfg.experiment.n_seeds >= 1, "experiment.n_seeds", "must be >= 1");
  check(!cfg.experiment.arms.empty(), "experiment.arms", "must list at least one arm");
  const std::set<std::string> valid_arms{"no_da", "classic_da", "oversample", "undersample",
                                         "sag_gan"};
  std::set<std::string> seen_arms;
  for (const auto& a : cfg.experiment.arms) {
    check(valid_arms.count(a) != 0, "experiment.arms",
          "arms must be among no_da, classic_da, oversample, undersample, sag_gan");
    check(seen_arms.insert(a).second, "experiment.arms", "duplicate arm");
  }
  return cfg;
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.good()) throw ValidationError(strfmt("config: cannot open %s", path.c_str()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(strfmt("config: %s is not valid JSON: %s", path.c_str(), e.what()));
  }
  return parse_config_json(doc);
}

nlohmann::json config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["data"] = {{"n_samples", cfg.data.n_samples},
               {"image_size", cfg.data.image_size},
               {"tumor_fraction", cfg.data.tumor_fraction},
               {"bumps_min", cfg.data.bumps_min},
               {"bumps_max", cfg.data.bumps_max},
               {"noise_amp", cfg.data.noise_amp},
               {"lesion_amp_min", cfg.data.lesion_amp_min},
               {"lesion_amp_max", cfg.data.lesion_amp_max},
               {"lesion_radius_min", cfg.data.lesion_radius_min},
               {"lesion_radius_max", cfg.data.lesion_radius_max},
               {"split_train", cfg.data.split_ratios[0]},
               {"split_val", cfg.data.split_ratios[1]},
               {"split_test", cfg.data.split_ratios[2]}};
  j["gan"] = {{"epochs", cfg.gan.epochs},
              {"batch_size", cfg.gan.batch_size},
              {"learning_rate", cfg.gan.learning_rate},
              {"beta1", cfg.gan.beta1},
              {"beta2", cfg.gan.beta2},
              {"lambda_gan", cfg.gan.lambda_gan},
              {"lambda_cyc", cfg.gan.lambda_cyc},
              {"image_size", cfg.gan.image_size},
              {"blocks", cfg.gan.blocks},
              {"checkpoint_every", cfg.gan.checkpoint_every},
              {"attention_supervision", cfg.gan.attention_supervision},
              {"mask_threshold", cfg.gan.mask_threshold}};
  j["classifier"] = {{"epochs", cfg.classifier.epochs},
                     {"batch_size", cfg.classifier.batch_size},
                     {"learning_rate", cfg.classifier.learning_rate},
                     {"beta1", cfg.classifier.beta1},
                     {"beta2", cfg.classifier.beta2}};
  j["experiment"] = {{"tumor_keep_fraction", cfg.experiment.tumor_keep_fraction},
                     {"n_seeds", cfg.experiment.n_seeds},
                     {"arms", cfg.experiment.arms}};
  return j;
}

std::string config_hash(const RunConfig& cfg) {
  // nlohmann::json stores object keys sorted, so dump() is canonical.
  const std::string dump = config_to_json(cfg).dump();
  return hex64(fnv1a64(dump));
}

}  // namespace saggan

// SPDX-License-Identifier: Apache-2.0
#include "experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "augment.hpp"

namespace fs = std::filesystem;

namespace saggan {

namespace {

struct SplitView {
  std::vector<Tensor<float>> tumor_images;   // scarce train tumors
  std::vector<Tensor<float>> normal_images;  // train normals
  std::vector<Tensor<float>> val_images, test_images;
  std::vector<int> val_labels, test_labels;
  int64_t image_size = 0;
};

SplitView build_views(const std::vector<SampleRecord>& dataset, const RunConfig& cfg) {
  SplitView v;
  SAGGAN_CHECK(!dataset.empty(), "run_experiment: empty dataset");
  v.image_size = dataset.front().image.shape.at(0);
  const std::vector<SampleRecord> scarce =
      apply_tumor_scarcity(dataset, cfg.experiment.tumor_keep_fraction);
  for (const auto& rec : scarce) {
    SAGGAN_CHECK(rec.image.shape == (Shape{v.image_size, v.image_size}),
                 "run_experiment: sample %s has shape %s, others are %lldx%lld",
                 rec.id.c_str(), shape_str(rec.image.shape).c_str(),
                 static_cast<long long>(v.image_size), static_cast<long long>(v.image_size));
    if (rec.split == "train") {
      if (rec.domain == Domain::tumor)
        v.tumor_images.push_back(rec.image);
      else
        v.normal_images.push_back(rec.image);
    } else if (rec.split == "val") {
      v.val_images.push_back(rec.image);
      v.val_labels.push_back(rec.label);
    } else {
      v.test_images.push_back(rec.image);
      v.test_labels.push_back(rec.label);
    }
  }
  SAGGAN_CHECK(!v.tumor_images.empty() && !v.normal_images.empty(),
               "run_experiment: scarce train split needs both classes (%zu tumor, %zu normal)",
               v.tumor_images.size(), v.normal_images.size());
  SAGGAN_CHECK(!v.val_images.empty(), "run_experiment: empty validation split");
  SAGGAN_CHECK(!v.test_images.empty(), "run_experiment: empty test split");
  return v;
}

void append_base(const SplitView& v, std::vector<Tensor<float>>& images,
                 std::vector<int>& labels) {
  for (const auto& img : v.tumor_images) {
    images.push_back(img);
    labels.push_back(1);
  }
  for (const auto& img : v.normal_images) {
    images.push_back(img);
    labels.push_back(0);
  }
}

// Training set for one arm/seed. Minority tumors are brought up to (or the
// majority normals down to) class balance, per the arm's strategy.
void build_arm_training_set(const std::string& arm, const SplitView& v, uint64_t rep_seed,
                            const Models<float>* gan_models, double mask_threshold,
                            std::vector<Tensor<float>>& images, std::vector<int>& labels) {
  const int64_t nt = static_cast<int64_t>(v.tumor_images.size());
  const int64_t nn = static_cast<int64_t>(v.normal_images.size());
  const int64_t deficit = std::max<int64_t>(0, nn - nt);

  if (arm == "no_da") {
    append_base(v, images, labels);
  } else if (arm == "classic_da") {
    append_base(v, images, labels);
    Rng rng(derive_seed(rep_seed, "classic-da"));
    for (int64_t k = 0; k < deficit; ++k) {
      const Tensor<float>& src = v.tumor_images[static_cast<size_t>(k % nt)];
      images.push_back(classic_augment(src, nullptr, random_augment_spec(rng)).first);
      labels.push_back(1);
    }
  } else if (arm == "oversample") {
    append_base(v, images, labels);
    for (int64_t k = 0; k < deficit; ++k) {
      images.push_back(v.tumor_images[static_cast<size_t>(k % nt)]);
      labels.push_back(1);
    }
  } else if (arm == "undersample") {
    // trim the majority class to the minority count
    Rng rng(derive_seed(rep_seed, "undersample"));
    const std::vector<Tensor<float>>& minority = nt <= nn ? v.tumor_images : v.normal_images;
    const std::vector<Tensor<float>>& majority = nt <= nn ? v.normal_images : v.tumor_images;
    const int minority_label = nt <= nn ? 1 : 0;
    for (const auto& img : minority) {
      images.push_back(img);
      labels.push_back(minority_label);
    }
    std::vector<size_t> idx(majority.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    for (size_t i = 0; i < minority.size(); ++i) {
      images.push_back(majority[idx[i]]);
      labels.push_back(1 - minority_label);
    }
  } else if (arm == "sag_gan") {
    SAGGAN_CHECK(gan_models != nullptr,
                 "run_experiment: sag_gan arm requires a trained checkpoint "
                 "(pass --gan-checkpoint or --train-first)");
    append_base(v, images, labels);
    Rng rng(derive_seed(rep_seed, "sag-gan"));
    std::vector<size_t> idx(v.normal_images.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    std::vector<Tensor<float>> sources;
    sources.reserve(static_cast<size_t>(deficit));
    for (int64_t k = 0; k < deficit; ++k)
      sources.push_back(v.normal_images[idx[static_cast<size_t>(k) % idx.size()]]);
    for (auto& syn : synthesize_augmented(sources, *gan_models, mask_threshold)) {
      images.push_back(std::move(syn.image));
      labels.push_back(1);
    }
  } else {
    throw ValidationError(strfmt("run_experiment: unknown arm %s", arm.c_str()));
  }
}

}  // namespace

ExperimentReport run_experiment(const std::vector<SampleRecord>& dataset, const RunConfig& cfg,
                                const Models<float>* gan_models) {
  const SplitView views = build_views(dataset, cfg);
  ExperimentReport report;
  report.config = cfg;
  for (const std::string& arm : cfg.experiment.arms) {
    for (int64_t rep = 0; rep < cfg.experiment.n_seeds; ++rep) {
      const uint64_t rep_seed = cfg.seed + static_cast<uint64_t>(rep);
      std::vector<Tensor<float>> images;
      std::vector<int> labels;
      build_arm_training_set(arm, views, rep_seed, gan_models, cfg.gan.mask_threshold,
                             images, labels);
      ClassifierTrainResult clf =
          train_classifier(images, labels, views.val_images, views.val_labels,
                           cfg.classifier, rep_seed, views.image_size);
      const std::vector<double> scores = classifier_scores(clf.net, views.test_images);
      ArmResult r;
      r.arm = arm;
      r.seed = rep_seed;
      r.conf = confusion(scores, views.test_labels);
      r.accuracy = accuracy(r.conf);
      r.auc = auc(scores, views.test_labels);
      r.tpr = tpr(r.conf);
      r.tnr = tnr(r.conf);
      report.rows.push_back(std::move(r));
      std::printf("arm=%s seed=%llu accuracy=%.4f auc=%.4f\n", arm.c_str(),
                  static_cast<unsigned long long>(rep_seed), report.rows.back().accuracy,
                  report.rows.back().auc);
      std::fflush(stdout);
    }
  }
  return report;
}

void write_report(const ExperimentReport& report, const std::string& dir) {
  fs::create_directories(dir);

  std::ofstream csv(fs::path(dir) / "report.csv", std::ios::binary);
  SAGGAN_CHECK(csv.good(), "write_report: cannot open %s/report.csv", dir.c_str());
  csv << "arm,seed,accuracy,auc,tpr,tnr,tp,fp,tn,fn\n";
  for (const auto& r : report.rows) {
    csv << strfmt("%s,%llu,%.9g,%.9g,%.9g,%.9g,%lld,%lld,%lld,%lld\n", r.arm.c_str(),
                  static_cast<unsigned long long>(r.seed), r.accuracy, r.auc, r.tpr, r.tnr,
                  static_cast<long long>(r.conf.tp), static_cast<long long>(r.conf.fp),
                  static_cast<long long>(r.conf.tn), static_cast<long long>(r.conf.fn));
  }
  csv.close();
  SAGGAN_CHECK(csv.good(), "write_report: failed writing %s/report.csv", dir.c_str());

  nlohmann::json j;
  j["config_hash"] = config_hash(report.config);
  j["config"] = config_to_json(report.config);
  for (const std::string& arm : report.config.experiment.arms) {
    double acc = 0, auc_v = 0, tpr_v = 0, tnr_v = 0;
    ConfusionCounts sum;
    nlohmann::json seeds = nlohmann::json::array();
    int64_t n = 0;
    for (const auto& r : report.rows) {
      if (r.arm != arm) continue;
      ++n;
      acc += r.accuracy;
      auc_v += r.auc;
      tpr_v += r.tpr;
      tnr_v += r.tnr;
      sum.tp += r.conf.tp;
      sum.fp += r.conf.fp;
      sum.tn += r.conf.tn;
      sum.fn += r.conf.fn;
      seeds.push_back({{"seed", r.seed},
                       {"accuracy", r.accuracy},
                       {"auc", r.auc},
                       {"tpr", r.tpr},
                       {"tnr", r.tnr},
                       {"confusion",
                        {{"tp", r.conf.tp}, {"fp", r.conf.fp}, {"tn", r.conf.tn},
                         {"fn", r.conf.fn}}}});
    }
    SAGGAN_CHECK(n > 0, "write_report: no rows for arm %s", arm.c_str());
    const double dn = static_cast<double>(n);
    j[arm] = {{"accuracy", acc / dn},
              {"auc", auc_v / dn},
              {"tpr", tpr_v / dn},
              {"tnr", tnr_v / dn},
              {"confusion",
               {{"tp", sum.tp}, {"fp", sum.fp}, {"tn", sum.tn}, {"fn", sum.fn}}},
              {"seeds", seeds}};
  }
  std::ofstream js(fs::path(dir) / "report.json", std::ios::binary);
  SAGGAN_CHECK(js.good(), "write_report: cannot open %s/report.json", dir.c_str());
  js << j.dump(2) << "\n";
  js.close();
  SAGGAN_CHECK(js.good(), "write_report: failed writing %s/report.json", dir.c_str());
}

}  // namespace saggan

// SPDX-License-Identifier: Apache-2.0
#include "train.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

namespace fs = std::filesystem;

namespace saggan {

namespace {

std::vector<Var<float>> values_of(const NamedParams<float>& named) {
  std::vector<Var<float>> out;
  out.reserve(named.size());
  for (const auto& [name, v] : named) out.push_back(v);
  return out;
}

std::vector<std::string> names_of(const NamedParams<float>& named) {
  std::vector<std::string> out;
  out.reserve(named.size());
  for (const auto& [name, v] : named) out.push_back(name);
  return out;
}

Tensor<float> masked(const Tensor<float>& mask, const Tensor<float>& img) {
  check_same_shape(mask, img, "masked pair");
  Tensor<float> out(img.shape);
  for (int64_t i = 0; i < img.size(); ++i) out[i] = mask[i] * img[i];
  return out;
}

Tensor<float> gather_batch(const std::vector<const Tensor<float>*>& imgs, int64_t image_size) {
  const int64_t b = static_cast<int64_t>(imgs.size());
  Tensor<float> out(Shape{b, 1, image_size, image_size});
  const int64_t hw = image_size * image_size;
  for (int64_t i = 0; i < b; ++i) {
    const Tensor<float>& src = *imgs[static_cast<size_t>(i)];
    SAGGAN_CHECK(src.shape == (Shape{image_size, image_size}),
                 "train: sample image %s does not match configured %lldx%lld",
                 shape_str(src.shape).c_str(), static_cast<long long>(image_size),
                 static_cast<long long>(image_size));
    std::copy(src.data.begin(), src.data.end(), out.data.begin() + i * hw);
  }
  return out;
}

}  // namespace

Trainer::Trainer(const RunConfig& cfg) : cfg_(cfg) {
  NetConfig nc;
  nc.image_size = cfg.gan.image_size;
  nc.k_blocks = cfg.gan.blocks;
  nc.seed = cfg.seed;
  models_ = build_models<float>(nc);
  NamedParams<float> gen = models_.generator_side_params();
  NamedParams<float> disc = models_.discriminator_side_params();
  gen_param_names_ = names_of(gen);
  disc_param_names_ = names_of(disc);
  opt_g_ = Adam<float>(values_of(gen), cfg.gan.learning_rate, cfg.gan.beta1, cfg.gan.beta2);
  opt_d_ = Adam<float>(values_of(disc), cfg.gan.learning_rate, cfg.gan.beta1, cfg.gan.beta2);
  loop_rng_ = Rng(derive_seed(cfg.seed, "train-loop"));
}

void Trainer::set_discriminators_trainable(bool trainable) {
  NamedParams<float> disc = models_.discriminator_side_params();
  for (auto& [name, p] : disc) p.set_requires_grad(trainable);
}

LossBundle Trainer::train_step(const Tensor<float>& batch_n, const Tensor<float>& batch_t,
                               const Tensor<float>& batch_m) {
  SAGGAN_CHECK(batch_n.shape.size() == 4 && batch_n.shape[0] >= 1,
               "train_step: empty normal batch");
  check_same_shape(batch_n, batch_t, "train_step batches");
  check_same_shape(batch_t, batch_m, "train_step tumor/mask");
  const LossWeights w{cfg_.gan.lambda_gan, cfg_.gan.lambda_cyc};

  // Generator-side forwards are built once with the graph attached; the
  // discriminator update below only needs their values, and the D step does
  // not modify generator or attention weights, so reusing them is exact.
  Var<float> n = constant(batch_n);
  Var<float> t = constant(batch_t);
  Var<float> a_n = models_.a_n.forward(n);
  Var<float> t_g = compose(n, models_.g_nt.forward(n), a_n);
  Var<float> a_t = models_.a_t.forward(t);
  Var<float> n_g = compose(t, models_.g_tn.forward(t), a_t);

  // ---- discriminator update: spectral refresh, detached fakes ----
  models_.d_t.refresh_spectral();
  models_.d_n.refresh_spectral();

  const Tensor<float>& an_det = a_n.val();
  const Tensor<float>& at_det = a_t.val();
  const Tensor<float>& tg_det = t_g.val();
  const Tensor<float>& ng_det = n_g.val();
  // Pairing by batch index: the tumor-side discriminator judges the real
  // tumor image and the translated normal image under the same attention
  // mask A_N(n); symmetrically for the normal side under A_T(t).
  Var<float> loss_d =
      add(adv_loss_discriminator(constant(masked(an_det, batch_t)),
                                 constant(masked(an_det, tg_det)), models_.d_t),
          adv_loss_discriminator(constant(masked(at_det, batch_n)),
                                 constant(masked(at_det, ng_det)), models_.d_n));
  check_finite_component(static_cast<double>(loss_d.item()), "adv_D");
  opt_d_.zero_grad();
  backward(loss_d);
  opt_d_.step();

  // ---- generator/attention update: discriminators frozen ----
  set_discriminators_trainable(false);
  Var<float> adv_t = adv_loss_generator(mul(a_n, t_g), models_.d_t);
  Var<float> adv_n = adv_loss_generator(mul(a_t, n_g), models_.d_n);

  // cycle reconstructions re-apply attention-composition at the second hop
  Var<float> n_rec = compose(t_g, models_.g_tn.forward(t_g), models_.a_t.forward(t_g));
  Var<float> t_rec = compose(n_g, models_.g_nt.forward(n_g), models_.a_n.forward(n_g));
  Var<float> cyc = cycle_loss(n, n_rec, t, t_rec);

  Var<float> attn = cfg_.gan.attention_supervision
                        ? attention_supervision_loss(constant(batch_m), a_t)
                        : constant(Tensor<float>(Shape{1}, 0.0f));

  LossBundle bundle = make_loss_bundle(
      static_cast<double>(adv_n.item()), static_cast<double>(adv_t.item()),
      static_cast<double>(cyc.item()), static_cast<double>(attn.item()), w);

  Var<float> total = total_loss_var(adv_n, adv_t, cyc, attn, w);
  opt_g_.zero_grad();
  backward(total);
  opt_g_.step();
  set_discriminators_trainable(true);
  return bundle;
}

void Trainer::train(const std::vector<SampleRecord>& train_records, const std::string& out_dir,
                    const StepCallback& on_step, int64_t stop_after_epoch) {
  std::vector<const Tensor<float>*> normals, tumors, masks;
  for (const auto& rec : train_records) {
    if (rec.domain == Domain::tumor) {
      tumors.push_back(&rec.image);
      masks.push_back(&rec.mask);
    } else {
      normals.push_back(&rec.image);
    }
  }
  SAGGAN_CHECK(!normals.empty() && !tumors.empty(),
               "train: need at least 1 normal and 1 tumor training sample (got %zu/%zu)",
               normals.size(), tumors.size());
  const int64_t batch = cfg_.gan.batch_size;
  const int64_t steps =
      static_cast<int64_t>(std::min(normals.size(), tumors.size())) / batch;
  SAGGAN_CHECK(steps >= 1,
               "train: batch_size %lld exceeds the smaller training pool (%zu samples)",
               static_cast<long long>(batch), std::min(normals.size(), tumors.size()));

  fs::create_directories(out_dir);
  std::ofstream hist(fs::path(out_dir) / "history.csv", std::ios::binary);
  SAGGAN_CHECK(hist.good(), "train: cannot open %s/history.csv", out_dir.c_str());
  hist << "epoch,step,adv_N,adv_T,cycle,attn_sup,total\n";

  std::vector<size_t> n_idx(normals.size()), t_idx(tumors.size());
  const int64_t last_epoch = stop_after_epoch > 0
                                 ? std::min(stop_after_epoch, cfg_.gan.epochs)
                                 : cfg_.gan.epochs;
  for (int64_t e = epoch_ + 1; e <= last_epoch; ++e) {
    for (size_t i = 0; i < n_idx.size(); ++i) n_idx[i] = i;
    for (size_t i = 0; i < t_idx.size(); ++i) t_idx[i] = i;
    loop_rng_.shuffle(n_idx);
    loop_rng_.shuffle(t_idx);
    for (int64_t s = 1; s <= steps; ++s) {
      std::vector<const Tensor<float>*> bn, bt, bm;
      for (int64_t k = (s - 1) * batch; k < s * batch; ++k) {
        bn.push_back(normals[n_idx[static_cast<size_t>(k)]]);
        bt.push_back(tumors[t_idx[static_cast<size_t>(k)]]);
        bm.push_back(masks[t_idx[static_cast<size_t>(k)]]);
      }
      LossBundle b;
      try {
        b = train_step(gather_batch(bn, cfg_.gan.image_size),
                       gather_batch(bt, cfg_.gan.image_size),
                       gather_batch(bm, cfg_.gan.image_size));
      } catch (const std::exception& ex) {
        throw std::runtime_error(strfmt("train: aborted at epoch %lld step %lld: %s",
                                        static_cast<long long>(e),
                                        static_cast<long long>(s), ex.what()));
      }
      hist << strfmt("%lld,%lld,%.9g,%.9g,%.9g,%.9g,%.9g\n", static_cast<long long>(e),
                     static_cast<long long>(s), b.adv_n, b.adv_t, b.cycle, b.attn_sup,
                     b.total);
      hist.flush();
      if (s == steps || s % 10 == 1) {
        std::printf("epoch=%lld step=%lld total=%.6g adv_N=%.6g adv_T=%.6g cycle=%.6g "
                    "attn_sup=%.6g\n",
                    static_cast<long long>(e), static_cast<long long>(s), b.total, b.adv_n,
                    b.adv_t, b.cycle, b.attn_sup);
        std::fflush(stdout);
      }
      if (on_step) on_step(e, s, b);
    }
    epoch_ = e;
    if (e % cfg_.gan.checkpoint_every == 0 || e == cfg_.gan.epochs)
      save((fs::path(out_dir) / "checkpoint").string());
  }
  hist.close();
  SAGGAN_CHECK(hist.good(), "train: failed writing %s/history.csv", out_dir.c_str());
  save((fs::path(out_dir) / "checkpoint").string());
}

// ---------------------------------------------------------------------------
// Checkpointing: manifest.json + one raw little-endian float32 file per array.
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kCheckpointFormat = "saggan-checkpoint-v1";

struct ArrayRef {
  std::string name;
  const Tensor<float>* tensor;
};

void write_array(const fs::path& file, const Tensor<float>& t) {
  std::ofstream out(file, std::ios::binary);
  SAGGAN_CHECK(out.good(), "checkpoint: cannot open %s for writing", file.c_str());
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  out.close();
  SAGGAN_CHECK(out.good(), "checkpoint: failed writing %s", file.c_str());
}

void read_array(const fs::path& file, const std::string& name, Tensor<float>& t) {
  std::ifstream in(file, std::ios::binary | std::ios::ate);
  if (!in.good())
    throw ValidationError(
        strfmt("checkpoint: array %s: missing file %s", name.c_str(), file.c_str()));
  const auto bytes = static_cast<int64_t>(in.tellg());
  SAGGAN_CHECK(bytes == t.size() * static_cast<int64_t>(sizeof(float)),
               "checkpoint: array %s: file %s holds %lld bytes, expected %lld", name.c_str(),
               file.c_str(), static_cast<long long>(bytes),
               static_cast<long long>(t.size() * sizeof(float)));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(t.data.data()), bytes);
  SAGGAN_CHECK(in.good(), "checkpoint: failed reading %s", file.c_str());
}

}  // namespace

void Trainer::save(const std::string& dir) const {
  fs::create_directories(dir);
  auto& self = const_cast<Trainer&>(*this);

  std::vector<ArrayRef> arrays;
  NamedParams<float> all_params = models_.named_params();
  for (const auto& [name, v] : all_params) arrays.push_back({"param/" + name, &v.val()});
  NamedParams<float> gen = models_.generator_side_params();
  for (size_t k = 0; k < gen.size(); ++k) {
    arrays.push_back({"opt_g/m/" + gen[k].first, &self.opt_g_.moments_m()[k]});
    arrays.push_back({"opt_g/v/" + gen[k].first, &self.opt_g_.moments_v()[k]});
  }
  NamedParams<float> disc = models_.discriminator_side_params();
  for (size_t k = 0; k < disc.size(); ++k) {
    arrays.push_back({"opt_d/m/" + disc[k].first, &self.opt_d_.moments_m()[k]});
    arrays.push_back({"opt_d/v/" + disc[k].first, &self.opt_d_.moments_v()[k]});
  }
  for (const auto& [name, st] : self.models_.named_spectral())
    arrays.push_back({"sn/" + name, &st->u});

  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["dtype"] = "float32";
  manifest["epoch"] = epoch_;
  manifest["config_hash"] = config_hash(cfg_);
  manifest["rng_state"] = loop_rng_.state();
  manifest["opt_d_step"] = opt_d_.step_count();
  manifest["opt_g_step"] = opt_g_.step_count();
  manifest["net"] = {{"image_size", models_.config.image_size},
                     {"k_blocks", models_.config.k_blocks},
                     {"gen_base", models_.config.gen_base},
                     {"attn_base", models_.config.attn_base},
                     {"disc_base", models_.config.disc_base},
                     {"reduction", models_.config.reduction}};
  nlohmann::json jarrays = nlohmann::json::array();
  for (size_t k = 0; k < arrays.size(); ++k) {
    const std::string file = strfmt("a%04zu.bin", k);
    write_array(fs::path(dir) / file, *arrays[k].tensor);
    jarrays.push_back({{"name", arrays[k].name},
                       {"shape", arrays[k].tensor->shape},
                       {"file", file}});
  }
  manifest["arrays"] = jarrays;

  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
  SAGGAN_CHECK(out.good(), "checkpoint: cannot open %s/manifest.json", dir.c_str());
  out << manifest.dump(2) << "\n";
  out.close();
  SAGGAN_CHECK(out.good(), "checkpoint: failed writing %s/manifest.json", dir.c_str());
}

void Trainer::load(const std::string& dir, bool allow_hash_mismatch) {
  const fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream in(mpath, std::ios::binary);
  if (!in.good())
    throw std::runtime_error(strfmt("checkpoint: missing manifest %s", mpath.c_str()));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(strfmt("checkpoint: %s is not valid JSON: %s", mpath.c_str(),
                                 e.what()));
  }
  SAGGAN_CHECK(manifest.value("format", "") == kCheckpointFormat,
               "checkpoint: %s has unknown format '%s'", mpath.c_str(),
               manifest.value("format", "").c_str());
  SAGGAN_CHECK(manifest.value("dtype", "") == "float32",
               "checkpoint: unsupported dtype '%s'", manifest.value("dtype", "").c_str());

  const auto& net = manifest.at("net");
  auto check_net = [&](const char* key, int64_t expect) {
    const int64_t got = net.at(key).get<int64_t>();
    SAGGAN_CHECK(got == expect,
                 "checkpoint: net.%s is %lld but the runtime config builds %lld", key,
                 static_cast<long long>(got), static_cast<long long>(expect));
  };
  check_net("image_size", models_.config.image_size);
  check_net("k_blocks", models_.config.k_blocks);
  check_net("gen_base", models_.config.gen_base);
  check_net("attn_base", models_.config.attn_base);
  check_net("disc_base", models_.config.disc_base);
  check_net("reduction", models_.config.reduction);

  const std::string saved_hash = manifest.at("config_hash").get<std::string>();
  const std::string runtime_hash = config_hash(cfg_);
  if (saved_hash != runtime_hash) {
    if (!allow_hash_mismatch)
      throw ValidationError(
          strfmt("checkpoint: config hash mismatch (saved %s, runtime %s); pass "
                 "--allow-hash-mismatch to proceed",
                 saved_hash.c_str(), runtime_hash.c_str()));
    std::fprintf(stderr,
                 "warning: loading checkpoint with config hash %s under runtime config %s\n",
                 saved_hash.c_str(), runtime_hash.c_str());
  }

  // route every expected array to its destination tensor
  std::map<std::string, Tensor<float>*> dest;
  NamedParams<float> all_params = models_.named_params();
  for (auto& [name, v] : all_params) dest["param/" + name] = &v.val();
  NamedParams<float> gen = models_.generator_side_params();
  for (size_t k = 0; k < gen.size(); ++k) {
    dest["opt_g/m/" + gen[k].first] = &opt_g_.moments_m()[k];
    dest["opt_g/v/" + gen[k].first] = &opt_g_.moments_v()[k];
  }
  NamedParams<float> disc = models_.discriminator_side_params();
  for (size_t k = 0; k < disc.size(); ++k) {
    dest["opt_d/m/" + disc[k].first] = &opt_d_.moments_m()[k];
    dest["opt_d/v/" + disc[k].first] = &opt_d_.moments_v()[k];
  }
  for (auto& [name, st] : models_.named_spectral()) dest["sn/" + name] = &st->u;

  std::set<std::string> filled;
  for (const auto& entry : manifest.at("arrays")) {
    const std::string name = entry.at("name").get<std::string>();
    auto it = dest.find(name);
    if (it == dest.end())
      throw ValidationError(strfmt("checkpoint: unknown array %s", name.c_str()));
    const Shape shape = entry.at("shape").get<Shape>();
    SAGGAN_CHECK(shape == it->second->shape, "checkpoint: array %s has shape %s, expected %s",
                 name.c_str(), shape_str(shape).c_str(),
                 shape_str(it->second->shape).c_str());
    read_array(fs::path(dir) / entry.at("file").get<std::string>(), name, *it->second);
    SAGGAN_CHECK(filled.insert(name).second, "checkpoint: duplicate array %s", name.c_str());
  }
  for (const auto& [name, ptr] : dest)
    SAGGAN_CHECK(filled.count(name) != 0, "checkpoint: missing array %s", name.c_str());

  epoch_ = manifest.at("epoch").get<int64_t>();
  loop_rng_.set_state(manifest.at("rng_state").get<std::string>());
  opt_d_.set_step_count(manifest.at("opt_d_step").get<int64_t>());
  opt_g_.set_step_count(manifest.at("opt_g_step").get<int64_t>());
}

std::vector<SynthesizedSample> synthesize_augmented(const std::vector<Tensor<float>>& normals,
                                                    const Models<float>& models,
                                                    double threshold) {
  SAGGAN_CHECK(threshold > 0.0 && threshold < 1.0,
               "synthesize_augmented: threshold %g outside (0,1)", threshold);
  const int64_t s = models.config.image_size;
  const int64_t hw = s * s;
  const int64_t batch = 8;
  NoGrad freeze;
  std::vector<SynthesizedSample> out;
  out.reserve(normals.size());
  for (size_t start = 0; start < normals.size(); start += batch) {
    const int64_t b =
        std::min<int64_t>(batch, static_cast<int64_t>(normals.size() - start));
    Tensor<float> x(Shape{b, 1, s, s});
    for (int64_t i = 0; i < b; ++i) {
      const Tensor<float>& src = normals[start + static_cast<size_t>(i)];
      SAGGAN_CHECK(src.shape == (Shape{s, s}),
                   "synthesize_augmented: image %s does not match configured %lldx%lld",
                   shape_str(src.shape).c_str(), static_cast<long long>(s),
                   static_cast<long long>(s));
      std::copy(src.data.begin(), src.data.end(), x.data.begin() + i * hw);
    }
    Var<float> n = constant(x);
    Var<float> a = models.a_n.forward(n);
    Var<float> t_g = compose(n, models.g_nt.forward(n), a);
    for (int64_t i = 0; i < b; ++i) {
      SynthesizedSample sample;
      sample.image = Tensor<float>(Shape{s, s});
      sample.mask = Tensor<float>(Shape{s, s});
      int64_t argmax = 0;
      float best = -1.0f;
      bool any = false;
      for (int64_t j = 0; j < hw; ++j) {
        const float av = a.val()[i * hw + j];
        sample.image[j] = std::clamp(t_g.val()[i * hw + j], -1.0f, 1.0f);
        sample.mask[j] = av >= static_cast<float>(threshold) ? 1.0f : 0.0f;
        any |= sample.mask[j] == 1.0f;
        if (av > best) {
          best = av;
          argmax = j;
        }
      }
      // a pseudo mask must mark at least one pixel to stay a valid tumor record
      if (!any) sample.mask[argmax] = 1.0f;
      out.push_back(std::move(sample));
    }
  }
  return out;
}

}  // namespace saggan

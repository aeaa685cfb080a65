// SPDX-License-Identifier: Apache-2.0
//
// GAN trainer: alternating-update effects on both parameter groups,
// gradient-isolation when only attention supervision is active, determinism,
// history layout, checkpoint round trips and failure modes, small-scale
// resume equivalence, and synthetic-sample export.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "train.hpp"

using namespace saggan;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("saggan-train-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.seed = 321;
  cfg.gan.image_size = 32;
  cfg.gan.blocks = 1;
  cfg.gan.batch_size = 2;
  cfg.gan.epochs = 2;
  cfg.gan.checkpoint_every = 1;
  return cfg;
}

// Stacks the first matching records into [B,1,S,S] batches.
struct Batches {
  Tensor<float> n, t, m;
};

Batches make_batches(const std::vector<SampleRecord>& recs, int64_t b, int64_t s) {
  Batches out;
  out.n = Tensor<float>(Shape{b, 1, s, s});
  out.t = Tensor<float>(Shape{b, 1, s, s});
  out.m = Tensor<float>(Shape{b, 1, s, s});
  int64_t ni = 0, ti = 0;
  for (const auto& rec : recs) {
    if (rec.domain == Domain::normal && ni < b) {
      std::copy(rec.image.data.begin(), rec.image.data.end(),
                out.n.data.begin() + static_cast<size_t>(ni * s * s));
      ++ni;
    } else if (rec.domain == Domain::tumor && ti < b) {
      std::copy(rec.image.data.begin(), rec.image.data.end(),
                out.t.data.begin() + static_cast<size_t>(ti * s * s));
      std::copy(rec.mask.data.begin(), rec.mask.data.end(),
                out.m.data.begin() + static_cast<size_t>(ti * s * s));
      ++ti;
    }
  }
  SAGGAN_CHECK(ni == b && ti == b, "make_batches: not enough records");
  return out;
}

std::map<std::string, Tensor<float>> snapshot(const Models<float>& m) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, p] : m.named_params()) out[name] = p.val();
  return out;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

TEST_CASE("one step updates both parameter groups with finite losses") {
  RunConfig cfg;
  cfg.gan.blocks = 1;  // default 64px geometry, trimmed depth for speed
  cfg.gan.batch_size = 2;
  Trainer trainer(cfg);
  auto recs = generate_phantom(41, 8, 64, 0.5);
  Batches b = make_batches(recs, 2, 64);

  auto before = snapshot(trainer.models());
  LossBundle losses = trainer.train_step(b.n, b.t, b.m);

  CHECK(std::isfinite(losses.adv_n));
  CHECK(std::isfinite(losses.adv_t));
  CHECK(std::isfinite(losses.cycle));
  CHECK(std::isfinite(losses.attn_sup));
  CHECK(std::isfinite(losses.total));
  CHECK(losses.cycle >= 0.0);
  CHECK(losses.attn_sup >= 0.0);

  auto after = snapshot(trainer.models());
  auto changed = [&](const std::string& prefix) {
    for (const auto& [name, t] : before)
      if (name.starts_with(prefix) && after.at(name).data != t.data) return true;
    return false;
  };
  CHECK(changed("g_nt"));
  CHECK(changed("g_tn"));
  CHECK(changed("a_n"));
  CHECK(changed("a_t"));
  CHECK(changed("d_t"));
  CHECK(changed("d_n"));
}

TEST_CASE("with zero adversarial and cycle weights only the supervised attention learns") {
  RunConfig cfg = tiny_config();
  cfg.gan.lambda_gan = 0.0;
  cfg.gan.lambda_cyc = 0.0;
  Trainer trainer(cfg);
  auto recs = generate_phantom(42, 8, 32, 0.5);
  Batches b = make_batches(recs, 2, 32);

  auto before = snapshot(trainer.models());
  trainer.train_step(b.n, b.t, b.m);
  auto after = snapshot(trainer.models());

  // Supervision reaches a_t alone on the generator side; discriminators have
  // their own objective and still move.
  for (const auto& [name, t] : before) {
    if (name.starts_with("g_nt") || name.starts_with("g_tn") || name.starts_with("a_n")) {
      CHECK_MESSAGE(after.at(name).data == t.data, name, " should be unchanged");
    }
  }
  bool a_t_changed = false;
  for (const auto& [name, t] : before)
    if (name.starts_with("a_t") && after.at(name).data != t.data) a_t_changed = true;
  CHECK(a_t_changed);
}

TEST_CASE("disabled attention supervision reports a zero component") {
  RunConfig cfg = tiny_config();
  cfg.gan.attention_supervision = false;
  Trainer trainer(cfg);
  auto recs = generate_phantom(43, 8, 32, 0.5);
  Batches b = make_batches(recs, 2, 32);
  LossBundle losses = trainer.train_step(b.n, b.t, b.m);
  CHECK(losses.attn_sup == 0.0);
  CHECK(losses.total ==
        doctest::Approx(losses.adv_n + losses.adv_t + 10.0 * losses.cycle).epsilon(1e-9));
}

TEST_CASE("train_step validates batch shapes and binary masks") {
  Trainer trainer(tiny_config());
  auto recs = generate_phantom(44, 8, 32, 0.5);
  Batches b = make_batches(recs, 2, 32);
  Tensor<float> bad_mask = b.m;
  bad_mask[5] = 0.25f;
  CHECK_THROWS_AS(static_cast<void>(trainer.train_step(b.n, b.t, bad_mask)), ValidationError);
  Tensor<float> wrong(Shape{2, 1, 16, 16}, 0.0f);
  CHECK_THROWS_AS(static_cast<void>(trainer.train_step(wrong, b.t, b.m)), ValidationError);
}

TEST_CASE("identical seeds give identical loss sequences") {
  auto recs = generate_phantom(45, 12, 32, 0.5);
  Batches b = make_batches(recs, 2, 32);
  Trainer t1(tiny_config());
  Trainer t2(tiny_config());
  for (int step = 0; step < 3; ++step) {
    LossBundle l1 = t1.train_step(b.n, b.t, b.m);
    LossBundle l2 = t2.train_step(b.n, b.t, b.m);
    CHECK(l1.adv_n == l2.adv_n);
    CHECK(l1.adv_t == l2.adv_t);
    CHECK(l1.cycle == l2.cycle);
    CHECK(l1.attn_sup == l2.attn_sup);
    CHECK(l1.total == l2.total);
  }
}

TEST_CASE("history has one row per step plus the header") {
  auto dir = fresh_dir("history");
  RunConfig cfg = tiny_config();
  cfg.gan.epochs = 1;
  auto recs = generate_phantom(46, 8, 32, 0.5);  // 4 normals + 4 tumors
  for (auto& rec : recs) rec.split = "train";
  Trainer trainer(cfg);
  trainer.train(recs, dir.string());

  auto lines = read_lines(dir / "history.csv");
  REQUIRE(lines.size() == 3);  // header + 2 steps (min pool 4 / batch 2)
  CHECK(lines[0] == "epoch,step,adv_N,adv_T,cycle,attn_sup,total");
  CHECK(lines[1].substr(0, 4) == "1,1,");
  CHECK(lines[2].substr(0, 4) == "1,2,");
  CHECK(fs::exists(dir / "checkpoint" / "manifest.json"));
  CHECK(trainer.completed_epochs() == 1);
}

TEST_CASE("training requires both domains in the train records") {
  Trainer trainer(tiny_config());
  auto recs = generate_phantom(47, 8, 32, 0.0);
  for (auto& rec : recs) rec.split = "train";
  auto dir = fresh_dir("one-domain");
  CHECK_THROWS_AS(trainer.train(recs, dir.string()), ValidationError);
}

TEST_CASE("checkpoint round trip preserves forward passes bitwise") {
  auto dir = fresh_dir("roundtrip");
  RunConfig cfg = tiny_config();
  auto recs = generate_phantom(48, 8, 32, 0.5);
  Batches b = make_batches(recs, 2, 32);
  Trainer trainer(cfg);
  trainer.train_step(b.n, b.t, b.m);  // move off the init point
  trainer.save((dir / "ckpt").string());

  Trainer loaded(cfg);
  loaded.load((dir / "ckpt").string());

  Var<float> x = constant(b.n);
  Var<float> y1, y2, a1, a2, d1, d2;
  {
    NoGrad guard;
    y1 = trainer.models().g_nt.forward(x);
    y2 = loaded.models().g_nt.forward(x);
    a1 = trainer.models().a_n.forward(x);
    a2 = loaded.models().a_n.forward(x);
    d1 = trainer.models().d_t.forward(x);
    d2 = loaded.models().d_t.forward(x);
  }
  CHECK(y1.val().data == y2.val().data);
  CHECK(a1.val().data == a2.val().data);
  CHECK(d1.val().data == d2.val().data);

  // continuing from the restored state reproduces the original trajectory
  LossBundle l1 = trainer.train_step(b.n, b.t, b.m);
  LossBundle l2 = loaded.train_step(b.n, b.t, b.m);
  CHECK(l1.total == l2.total);
}

TEST_CASE("corrupt array length fails naming the array") {
  auto dir = fresh_dir("corrupt");
  RunConfig cfg = tiny_config();
  Trainer trainer(cfg);
  trainer.save((dir / "ckpt").string());

  // a0000.bin backs the first named array; truncating it must be caught
  std::ofstream(dir / "ckpt" / "a0000.bin", std::ios::binary).write("xx", 2);
  Trainer loaded(cfg);
  try {
    loaded.load((dir / "ckpt").string());
    FAIL("expected an exception");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("param/g_nt.enc1.w") != std::string::npos);
    CHECK(std::string(e.what()).find("bytes") != std::string::npos);
  }
}

TEST_CASE("config hash mismatch requires the explicit override") {
  auto dir = fresh_dir("hash");
  RunConfig cfg = tiny_config();
  Trainer trainer(cfg);
  trainer.save((dir / "ckpt").string());

  RunConfig other = cfg;
  other.gan.learning_rate = 1e-3;  // same architecture, different run config
  Trainer strict(other);
  CHECK_THROWS_WITH_AS(strict.load((dir / "ckpt").string()),
                       doctest::Contains("config hash mismatch"), ValidationError);
  Trainer relaxed(other);
  relaxed.load((dir / "ckpt").string(), true);  // warns on stderr, proceeds

  RunConfig incompatible = cfg;
  incompatible.gan.blocks = 2;  // different architecture: never loadable
  Trainer wrong_net(incompatible);
  CHECK_THROWS_WITH_AS(wrong_net.load((dir / "ckpt").string(), true),
                       doctest::Contains("net.k_blocks"), ValidationError);
}

TEST_CASE("interrupt-and-resume matches the uninterrupted loss history") {
  RunConfig cfg = tiny_config();
  cfg.gan.epochs = 4;
  auto recs = generate_phantom(49, 12, 32, 0.5);
  for (auto& rec : recs) rec.split = "train";

  auto full_dir = fresh_dir("resume-full");
  Trainer full(cfg);
  full.train(recs, full_dir.string());
  auto full_lines = read_lines(full_dir / "history.csv");

  auto part_dir = fresh_dir("resume-part");
  Trainer phase1(cfg);
  phase1.train(recs, part_dir.string(), nullptr, 2);  // stop early at epoch 2
  CHECK(phase1.completed_epochs() == 2);

  auto resume_dir = fresh_dir("resume-cont");
  Trainer phase2(cfg);
  phase2.load((part_dir / "checkpoint").string());
  CHECK(phase2.completed_epochs() == 2);
  phase2.train(recs, resume_dir.string());
  CHECK(phase2.completed_epochs() == 4);
  auto resumed_lines = read_lines(resume_dir / "history.csv");

  // The resumed history covers epochs 3..4 and must match the tail of the
  // uninterrupted run row for row.
  REQUIRE(full_lines.size() > resumed_lines.size());
  CHECK(resumed_lines[0] == full_lines[0]);
  const size_t tail = resumed_lines.size() - 1;
  const size_t offset = full_lines.size() - tail;
  for (size_t i = 1; i < resumed_lines.size(); ++i) {
    INFO("row ", i);
    std::istringstream a(resumed_lines[i]), b(full_lines[offset + i - 1]);
    std::string fa, fb;
    int field = 0;
    while (std::getline(a, fa, ',') && std::getline(b, fb, ',')) {
      if (field < 2) {
        CHECK(fa == fb);  // epoch and step indices
      } else {
        CHECK(std::abs(std::stod(fa) - std::stod(fb)) <= 1e-6);
      }
      ++field;
    }
    CHECK(field == 7);
  }
}

TEST_CASE("synthesis: count, ranges, pseudo masks, and the zero-attention identity") {
  RunConfig cfg = tiny_config();
  Trainer trainer(cfg);
  auto recs = generate_phantom(50, 6, 32, 0.0);
  std::vector<Tensor<float>> normals;
  for (const auto& rec : recs) normals.push_back(rec.image);

  auto out = synthesize_augmented(normals, trainer.models(), 0.5);
  REQUIRE(out.size() == normals.size());
  for (const auto& s : out) {
    REQUIRE(s.image.shape == (Shape{32, 32}));
    REQUIRE(s.mask.shape == (Shape{32, 32}));
    int64_t pos = 0;
    for (int64_t i = 0; i < s.image.size(); ++i) {
      CHECK(s.image[i] >= -1.0f);
      CHECK(s.image[i] <= 1.0f);
      CHECK((s.mask[i] == 0.0f || s.mask[i] == 1.0f));
      pos += s.mask[i] == 1.0f;
    }
    CHECK(pos >= 1);
  }

  CHECK_THROWS_AS(static_cast<void>(synthesize_augmented(normals, trainer.models(), 0.0)),
                  ValidationError);
  CHECK_THROWS_AS(static_cast<void>(synthesize_augmented(normals, trainer.models(), 1.0)),
                  ValidationError);

  // Forcing the normal-side attention to zero makes composition the identity:
  // a hugely negative head bias saturates the sigmoid at exactly 0.
  trainer.models().a_n.head.b.val()[0] = -1e30f;
  auto idle = synthesize_augmented(normals, trainer.models(), 0.5);
  for (size_t i = 0; i < normals.size(); ++i)
    CHECK(idle[i].image.data == normals[i].data);
}

// SPDX-License-Identifier: Apache-2.0
#include "phantom.hpp"

#include <algorithm>
#include <cmath>

namespace saggan {

namespace {

struct Ellipse {
  double cx, cy, a, b, theta;  // center, semi-axes (pixels), rotation

  // squared normalized radius: <= 1 inside
  double rho2(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double ct = std::cos(theta), st = std::sin(theta);
    const double u = dx * ct + dy * st;
    const double v = -dx * st + dy * ct;
    return (u / a) * (u / a) + (v / b) * (v / b);
  }
};

// Background band inside the skull. Kept well below lesion amplitudes so the
// inside/outside contrast margin is enforceable.
constexpr double kBackgroundLo = -0.55;
constexpr double kBackgroundHi = 0.05;
constexpr double kMarginTarget = 0.25;  // resample lesions until margin >= this
constexpr double kLesionCore = 0.6;     // rho below this gets full amplitude
constexpr double kMaxAreaFrac = 0.18;   // cap pi*a*b to keep mask areas in bounds

struct Field {
  Tensor<float> image;       // [S,S]
  std::vector<char> inside;  // skull interior flags
};

Field make_background(int64_t s, const PhantomParams& pp, Rng& rng) {
  const double sd = static_cast<double>(s);
  Ellipse skull{0.5 * sd, 0.5 * sd, rng.uniform(0.38, 0.45) * sd, rng.uniform(0.42, 0.48) * sd,
                0.0};
  const int64_t nb = rng.uniform_int(pp.bumps_min, pp.bumps_max);
  std::vector<double> gx(nb), gy(nb), gs(nb), ga(nb);
  for (int64_t k = 0; k < nb; ++k) {
    gx[k] = rng.uniform(0.15, 0.85) * sd;
    gy[k] = rng.uniform(0.15, 0.85) * sd;
    gs[k] = rng.uniform(0.05, 0.20) * sd;
    ga[k] = rng.uniform(-1.0, 1.0);
  }
  Field f;
  f.image = Tensor<float>(Shape{s, s}, -1.0f);
  f.inside.assign(static_cast<size_t>(s * s), 0);
  std::vector<double> raw(static_cast<size_t>(s * s), 0.0);
  double lo = 1e300, hi = -1e300;
  for (int64_t y = 0; y < s; ++y)
    for (int64_t x = 0; x < s; ++x) {
      if (skull.rho2(x, y) > 1.0) continue;
      double v = 0.0;
      for (int64_t k = 0; k < nb; ++k) {
        const double dx = x - gx[k], dy = y - gy[k];
        v += ga[k] * std::exp(-(dx * dx + dy * dy) / (2.0 * gs[k] * gs[k]));
      }
      v += rng.uniform(-pp.noise_amp, pp.noise_amp);
      raw[static_cast<size_t>(y * s + x)] = v;
      f.inside[static_cast<size_t>(y * s + x)] = 1;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  const double span = hi - lo;
  for (int64_t i = 0; i < s * s; ++i) {
    if (!f.inside[static_cast<size_t>(i)]) continue;
    const double t = span > 0 ? (raw[static_cast<size_t>(i)] - lo) / span : 0.5;
    f.image[i] = static_cast<float>(kBackgroundLo + t * (kBackgroundHi - kBackgroundLo));
  }
  return f;
}

// smoothstep from 1 at the lesion core to 0 at the support boundary
double lesion_profile(double rho) {
  if (rho <= kLesionCore) return 1.0;
  if (rho >= 1.0) return 0.0;
  const double t = (1.0 - rho) / (1.0 - kLesionCore);
  return t * t * (3.0 - 2.0 * t);
}

bool place_lesion(int64_t s, const LesionParams& lp, Rng& rng, Tensor<float>& img,
                  Tensor<float>& mask, const std::vector<char>& inside) {
  const double sd = static_cast<double>(s);
  const double amp = rng.uniform(lp.amp_min, lp.amp_max);
  double a = rng.uniform(lp.radius_min_frac, lp.radius_max_frac) * sd;
  double b = rng.uniform(lp.radius_min_frac, lp.radius_max_frac) * sd;
  const double max_area = kMaxAreaFrac * sd * sd;
  if (M_PI * a * b > max_area) {
    const double scale = std::sqrt(max_area / (M_PI * a * b));
    a *= scale;
    b *= scale;
  }
  const double theta = rng.uniform(0.0, M_PI);
  const double reach = std::max(a, b) + 2.0;
  // center drawn so the whole support stays inside the skull interior strip
  double cx = 0, cy = 0;
  bool placed = false;
  for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
    cx = rng.uniform(reach, sd - reach);
    cy = rng.uniform(reach, sd - reach);
    placed = true;
    for (int corner = 0; corner < 4 && placed; ++corner) {
      const double px = cx + (corner & 1 ? reach : -reach);
      const double py = cy + (corner & 2 ? reach : -reach);
      const int64_t ix = static_cast<int64_t>(std::lround(px));
      const int64_t iy = static_cast<int64_t>(std::lround(py));
      if (ix < 0 || ix >= s || iy < 0 || iy >= s ||
          !inside[static_cast<size_t>(iy * s + ix)])
        placed = false;
    }
  }
  if (!placed) return false;
  Ellipse lesion{cx, cy, a, b, theta};
  mask = Tensor<float>(Shape{s, s}, 0.0f);
  for (int64_t y = 0; y < s; ++y)
    for (int64_t x = 0; x < s; ++x) {
      const double rho = std::sqrt(lesion.rho2(x, y));
      if (rho >= 1.0) continue;
      mask[y * s + x] = 1.0f;
      img[y * s + x] = static_cast<float>(
          std::min(1.0, img[y * s + x] + amp * lesion_profile(rho)));
    }
  return true;
}

double margin_of(const Tensor<float>& img, const Tensor<float>& mask,
                 const std::vector<char>& inside) {
  double in_sum = 0, out_sum = 0;
  int64_t in_n = 0, out_n = 0;
  for (int64_t i = 0; i < img.size(); ++i) {
    if (!inside[static_cast<size_t>(i)]) continue;
    if (mask[i] == 1.0f) {
      in_sum += img[i];
      ++in_n;
    } else {
      out_sum += img[i];
      ++out_n;
    }
  }
  if (in_n == 0 || out_n == 0) return -1.0;
  return in_sum / in_n - out_sum / out_n;
}

}  // namespace

std::vector<SampleRecord> generate_phantom(uint64_t seed, int64_t n_samples, int64_t image_size,
                                           double tumor_fraction, const PhantomParams& pp) {
  SAGGAN_CHECK(image_size >= 32, "generate_phantom: image_size %lld must be >= 32",
               static_cast<long long>(image_size));
  SAGGAN_CHECK(n_samples >= 1, "generate_phantom: n_samples must be positive");
  SAGGAN_CHECK(tumor_fraction >= 0.0 && tumor_fraction <= 1.0,
               "generate_phantom: tumor_fraction %g outside [0,1]", tumor_fraction);
  SAGGAN_CHECK(pp.lesion.radius_max_frac < 0.5,
               "generate_phantom: lesion radius fraction %g reaches the image half-size",
               pp.lesion.radius_max_frac);
  SAGGAN_CHECK(pp.lesion.radius_min_frac > 0.0 &&
                   pp.lesion.radius_min_frac <= pp.lesion.radius_max_frac,
               "generate_phantom: lesion radius bounds [%g,%g] invalid",
               pp.lesion.radius_min_frac, pp.lesion.radius_max_frac);
  SAGGAN_CHECK(pp.lesion.amp_min <= pp.lesion.amp_max && pp.lesion.amp_min > 0.0,
               "generate_phantom: lesion amplitude bounds [%g,%g] invalid", pp.lesion.amp_min,
               pp.lesion.amp_max);
  SAGGAN_CHECK(pp.bumps_min >= 1 && pp.bumps_min <= pp.bumps_max,
               "generate_phantom: bump count bounds [%lld,%lld] invalid",
               static_cast<long long>(pp.bumps_min), static_cast<long long>(pp.bumps_max));

  const int64_t n_tumor = std::llround(tumor_fraction * static_cast<double>(n_samples));
  std::vector<SampleRecord> out;
  out.reserve(static_cast<size_t>(n_samples));
  for (int64_t i = 0; i < n_samples; ++i) {
    const bool tumor = i < n_tumor;
    Rng rng(derive_seed(seed, strfmt("sample-%lld", static_cast<long long>(i))));
    SampleRecord rec;
    rec.domain = tumor ? Domain::tumor : Domain::normal;
    rec.label = tumor ? 1 : 0;
    rec.id = strfmt("%c%04lld", tumor ? 't' : 'n',
                    static_cast<long long>(tumor ? i : i - n_tumor));
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      Field f = make_background(image_size, pp, rng);
      if (!tumor) {
        rec.image = std::move(f.image);
        ok = true;
        break;
      }
      Tensor<float> mask;
      if (!place_lesion(image_size, pp.lesion, rng, f.image, mask, f.inside)) continue;
      if (margin_of(f.image, mask, f.inside) < kMarginTarget) continue;
      int64_t area = 0;
      for (int64_t j = 0; j < mask.size(); ++j) area += mask[j] == 1.0f;
      const double frac =
          static_cast<double>(area) / static_cast<double>(image_size * image_size);
      if (frac < 0.006 || frac > 0.195) continue;
      rec.image = std::move(f.image);
      rec.mask = std::move(mask);
      ok = true;
    }
    SAGGAN_CHECK(ok, "generate_phantom: could not place a separable lesion for %s "
                     "(lesion radii too large for the skull?)",
                 rec.id.c_str());
    out.push_back(std::move(rec));
  }
  return out;
}

double lesion_contrast_margin(const SampleRecord& rec) {
  SAGGAN_CHECK(rec.domain == Domain::tumor && rec.mask.size() == rec.image.size(),
               "lesion_contrast_margin: record %s is not a tumor sample", rec.id.c_str());
  const int64_t s = rec.image.shape[0];
  // skull interior proxy: everything above the air floor
  std::vector<char> inside(static_cast<size_t>(rec.image.size()));
  for (int64_t i = 0; i < rec.image.size(); ++i)
    inside[static_cast<size_t>(i)] = rec.image[i] > -0.99f;
  (void)s;
  double in_sum = 0, out_sum = 0;
  int64_t in_n = 0, out_n = 0;
  for (int64_t i = 0; i < rec.image.size(); ++i) {
    if (!inside[static_cast<size_t>(i)]) continue;
    if (rec.mask[i] == 1.0f) {
      in_sum += rec.image[i];
      ++in_n;
    } else {
      out_sum += rec.image[i];
      ++out_n;
    }
  }
  SAGGAN_CHECK(in_n > 0 && out_n > 0, "lesion_contrast_margin: degenerate mask for %s",
               rec.id.c_str());
  return in_sum / in_n - out_sum / out_n;
}

}  // namespace saggan

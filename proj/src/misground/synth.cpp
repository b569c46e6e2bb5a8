#include "misground/synth.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "semsam/rng.hpp"

namespace misground {

namespace {

constexpr std::array<const char*, 24> kNames{
    "liver",          "spleen",        "left kidney",      "right kidney",   "stomach",     "pancreas",
    "gallbladder",    "urinary bladder", "aorta",          "inferior vena cava", "left lung", "right lung",
    "heart",          "esophagus",     "trachea",          "duodenum",       "colon",       "small bowel",
    "left adrenal gland", "right adrenal gland", "sacrum", "left femur",     "right femur", "vertebra L1"};

struct Blob {
  std::array<double, 3> centre;
  std::array<double, 3> radius;
};

}  // namespace

std::string synthetic_structure_name(std::int32_t label) {
  if (label >= 1 && label <= static_cast<std::int32_t>(kNames.size())) return kNames[static_cast<std::size_t>(label - 1)];
  return fmt::format("structure {}", label);
}

SyntheticScan make_synthetic_scan(const SynthConfig& cfg) {
  for (int a = 0; a < 3; ++a) {
    if (cfg.dims[a] < 1) throw ValidationError("synthetic dims must be >= 1");
    if (!(cfg.spacing[a] > 0.0)) throw ValidationError("synthetic spacing must be positive");
    if (cfg.axis_signs[a] != 1 && cfg.axis_signs[a] != -1) throw ValidationError("axis signs must be +1 or -1");
  }
  if (cfg.structures < 0 || !(cfg.min_radius > 0.0) || cfg.max_radius < cfg.min_radius)
    throw ValidationError("bad synthetic structure settings");

  Geometry g;
  g.dims = cfg.dims;
  for (int a = 0; a < 3; ++a) {
    g.affine[a][a] = cfg.axis_signs[a] * cfg.spacing[a];
    g.affine[a][3] = -cfg.axis_signs[a] * cfg.spacing[a] * static_cast<double>(cfg.dims[a] - 1) / 2.0;
  }

  semsam::Xoshiro256 rng(cfg.seed);
  std::vector<Blob> blobs;
  for (int attempt = 0; attempt < cfg.structures * 200 && static_cast<int>(blobs.size()) < cfg.structures; ++attempt) {
    Blob b{};
    bool fits = true;
    for (int a = 0; a < 3; ++a) {
      double r = cfg.min_radius + (cfg.max_radius - cfg.min_radius) * rng.uniform01();
      r = std::min(r, std::max(0.5, (static_cast<double>(cfg.dims[a]) - 1.0) / 2.0));
      b.radius[a] = r;
      double lo = r, hi = static_cast<double>(cfg.dims[a] - 1) - r;
      if (hi < lo) {
        fits = false;
        break;
      }
      b.centre[a] = lo + (hi - lo) * rng.uniform01();
    }
    if (!fits) continue;
    for (const auto& o : blobs) {
      // keep a one-voxel gap along the bounding spheres
      double d2 = 0.0, rsum = 0.0;
      for (int a = 0; a < 3; ++a) d2 += (b.centre[a] - o.centre[a]) * (b.centre[a] - o.centre[a]);
      rsum = *std::max_element(b.radius.begin(), b.radius.end()) + *std::max_element(o.radius.begin(), o.radius.end()) + 1.0;
      if (d2 < rsum * rsum) {
        fits = false;
        break;
      }
    }
    if (fits) blobs.push_back(b);
  }

  SyntheticScan scan;
  scan.volume = Volume{g, std::vector<float>(g.voxel_count(), -1000.0f)};
  scan.labels = LabelMap{g, std::vector<std::int32_t>(g.voxel_count(), 0), {}};
  std::vector<float> hu(blobs.size());
  for (std::size_t n = 0; n < blobs.size(); ++n) {
    hu[n] = static_cast<float>(std::round(-50.0 + 250.0 * rng.uniform01()));
    auto label = static_cast<std::int32_t>(n + 1);
    scan.labels.names[label] = synthetic_structure_name(label);
  }

  const auto& d = g.dims;
  std::array<double, 3> mid{(d[0] - 1) / 2.0, (d[1] - 1) / 2.0, (d[2] - 1) / 2.0};
  std::size_t idx = 0;
  for (std::int64_t k = 0; k < d[2]; ++k)
    for (std::int64_t j = 0; j < d[1]; ++j)
      for (std::int64_t i = 0; i < d[0]; ++i, ++idx) {
        std::array<double, 3> p{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
        // soft-tissue body filling an ellipse in the axial plane
        double bx = (p[0] - mid[0]) / (0.48 * d[0] + 0.5), by = (p[1] - mid[1]) / (0.48 * d[1] + 0.5);
        if (bx * bx + by * by <= 1.0) scan.volume.voxels[idx] = 30.0f + static_cast<float>(std::round(20.0 * rng.uniform01()));
        for (std::size_t n = 0; n < blobs.size(); ++n) {
          double s = 0.0;
          for (int a = 0; a < 3; ++a) {
            double t = (p[a] - blobs[n].centre[a]) / blobs[n].radius[a];
            s += t * t;
          }
          if (s <= 1.0) {
            scan.labels.labels[idx] = static_cast<std::int32_t>(n + 1);
            scan.volume.voxels[idx] = hu[n];
          }
        }
      }

  // an ellipsoid can miss every voxel centre when its radius is tiny; keep
  // label names only for labels that actually appear
  std::vector<bool> present(blobs.size() + 1, false);
  for (auto l : scan.labels.labels) present[static_cast<std::size_t>(l)] = true;
  for (std::size_t n = 1; n <= blobs.size(); ++n)
    if (!present[n]) scan.labels.names.erase(static_cast<std::int32_t>(n));
  return scan;
}

}  // namespace misground

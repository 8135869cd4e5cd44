// SPDX-License-Identifier: Apache-2.0
#include "seqfuse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <string>

#include "seqfuse/error.hpp"

namespace seqfuse {

using json = nlohmann::json;

std::map<int, double> default_visibility(int cameras) {
  static const std::map<int, double> shape = {{2, 0.15}, {3, 0.2}, {4, 0.2}, {5, 0.2}, {6, 0.25}};
  if (cameras == 1) return {{1, 1.0}};
  std::map<int, double> out;
  for (const auto& [n, w] : shape) {
    if (n <= cameras) out[n] = w;
  }
  return out;
}

std::map<int, double> SyntheticSpec::effective_visibility() const {
  return visibility.empty() ? default_visibility(cameras) : visibility;
}

void SyntheticSpec::validate() const {
  if (train_identities < 0 || test_identities < 0 || distractors < 0) {
    throw ArgumentError("identity counts must be non-negative");
  }
  if (train_identities + test_identities + distractors < 1) throw ArgumentError("need at least one identity");
  if (cameras < 1) throw ArgumentError("cameras must be >= 1");
  if (dim < 1) throw ArgumentError("dim must be >= 1");
  if (!(noise >= 0.0) || !(latent_scale >= 0.0) || !(transform_scale >= 0.0) || !(camera_bias_scale >= 0.0)) {
    throw ArgumentError("scales and noise must be non-negative");
  }
  if (train_records_per_camera < 1 || gallery_records_per_camera < 1) {
    throw ArgumentError("records per camera must be >= 1");
  }
  const auto hist = effective_visibility();
  double total = 0.0;
  for (const auto& [n, w] : hist) {
    if (w < 0.0) throw ArgumentError("visibility weights must be non-negative");
    if (w == 0.0) continue;
    if (n < 1) throw ArgumentError("visibility histogram has mass on " + std::to_string(n) + " cameras");
    if (n > cameras) {
      throw ArgumentError("infeasible visibility histogram: mass on " + std::to_string(n) + " cameras but only " +
                          std::to_string(cameras) + " exist");
    }
    total += w;
  }
  if (!(total > 0.0) && (train_identities + test_identities) > 0) {
    throw ArgumentError("visibility histogram has no mass");
  }
}

json to_json(const SyntheticSpec& s) {
  json vis = json::object();
  for (const auto& [n, w] : s.effective_visibility()) vis[std::to_string(n)] = w;
  return {{"train_identities", s.train_identities},
          {"test_identities", s.test_identities},
          {"distractors", s.distractors},
          {"cameras", s.cameras},
          {"dim", s.dim},
          {"latent_scale", s.latent_scale},
          {"transform_scale", s.transform_scale},
          {"camera_bias_scale", s.camera_bias_scale},
          {"noise", s.noise},
          {"visibility", vis},
          {"train_records_per_camera", s.train_records_per_camera},
          {"gallery_records_per_camera", s.gallery_records_per_camera},
          {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const json& j) {
  SyntheticSpec s;
  try {
    s.train_identities = j.value("train_identities", s.train_identities);
    s.test_identities = j.value("test_identities", s.test_identities);
    s.distractors = j.value("distractors", s.distractors);
    s.cameras = j.value("cameras", s.cameras);
    s.dim = j.value("dim", s.dim);
    s.latent_scale = j.value("latent_scale", s.latent_scale);
    s.transform_scale = j.value("transform_scale", s.transform_scale);
    s.camera_bias_scale = j.value("camera_bias_scale", s.camera_bias_scale);
    s.noise = j.value("noise", s.noise);
    s.train_records_per_camera = j.value("train_records_per_camera", s.train_records_per_camera);
    s.gallery_records_per_camera = j.value("gallery_records_per_camera", s.gallery_records_per_camera);
    s.seed = j.value("seed", s.seed);
    if (j.contains("visibility")) {
      for (const auto& [k, v] : j.at("visibility").items()) s.visibility[std::stoi(k)] = v.get<double>();
    }
  } catch (const json::exception& e) {
    throw ArgumentError(std::string("invalid synthetic spec: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ArgumentError("invalid synthetic spec: visibility keys must be integers");
  }
  return s;
}

namespace {

// Modified Gram-Schmidt with one re-orthogonalisation pass; columns of the
// result are orthonormal to ~1e-15.
Tensor orthonormalize(Tensor m) {
  const std::size_t n = m.rows();
  for (std::size_t j = 0; j < n; ++j) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < j; ++k) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i) dot += m.at(i, k) * m.at(i, j);
        for (std::size_t i = 0; i < n; ++i) m.at(i, j) -= dot * m.at(i, k);
      }
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) norm += m.at(i, j) * m.at(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("degenerate camera transform");
    for (std::size_t i = 0; i < n; ++i) m.at(i, j) /= norm;
  }
  return m;
}

std::string record_id(const char* prefix, int pid, int cam, int n) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s-%05d-c%d-%d", prefix, pid, cam, n);
  return buf;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto d = static_cast<std::size_t>(spec.dim);

  SyntheticDataset out;
  for (int c = 0; c < spec.cameras; ++c) {
    Tensor g = Tensor::identity(d);
    for (double& v : g.values()) v += spec.transform_scale * gauss(rng);
    out.transforms.push_back(orthonormalize(std::move(g)));
    Vec b(d);
    for (double& v : b) v = spec.camera_bias_scale * gauss(rng);
    out.biases.push_back(std::move(b));
  }

  const auto hist = spec.effective_visibility();
  std::vector<int> counts;
  std::vector<double> weights;
  for (const auto& [n, w] : hist) {
    counts.push_back(n);
    weights.push_back(w);
  }
  std::discrete_distribution<std::size_t> pick_count(weights.begin(), weights.end());

  auto observe = [&](int pid, int cam) {
    const Vec& mu = out.latents[static_cast<std::size_t>(pid - 1)];
    const Tensor& a = out.transforms[static_cast<std::size_t>(cam - 1)];
    const Vec& b = out.biases[static_cast<std::size_t>(cam - 1)];
    std::vector<float> f(d);
    for (std::size_t r = 0; r < d; ++r) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += a.at(r, k) * mu[k];
      f[r] = static_cast<float>(acc + b[r] + spec.noise * gauss(rng));
    }
    return f;
  };
  auto visible_cameras = [&]() {
    const int n = counts[pick_count(rng)];
    std::vector<int> cams(static_cast<std::size_t>(spec.cameras));
    std::iota(cams.begin(), cams.end(), 1);
    std::shuffle(cams.begin(), cams.end(), rng);
    cams.resize(static_cast<std::size_t>(n));
    std::sort(cams.begin(), cams.end());
    return cams;
  };

  std::vector<FeatureRecord> records;
  const int total_ids = spec.train_identities + spec.test_identities + spec.distractors;
  for (int pid = 1; pid <= total_ids; ++pid) {
    Vec mu(d);
    for (double& v : mu) v = spec.latent_scale * gauss(rng);
    out.latents.push_back(std::move(mu));

    const bool train = pid <= spec.train_identities;
    const bool distractor = pid > spec.train_identities + spec.test_identities;
    if (distractor) {
      std::uniform_int_distribution<int> cam_dist(1, spec.cameras);
      std::uniform_int_distribution<int> n_dist(1, spec.gallery_records_per_camera);
      const int cam = cam_dist(rng);
      const int n = n_dist(rng);
      for (int k = 0; k < n; ++k) records.push_back({record_id("g", pid, cam, k), pid, cam, Split::gallery, observe(pid, cam), {}});
      continue;
    }
    for (int cam : visible_cameras()) {
      if (train) {
        std::uniform_int_distribution<int> n_dist(1, spec.train_records_per_camera);
        const int n = n_dist(rng);
        for (int k = 0; k < n; ++k) records.push_back({record_id("t", pid, cam, k), pid, cam, Split::train, observe(pid, cam), {}});
      } else {
        records.push_back({record_id("q", pid, cam, 0), pid, cam, Split::query, observe(pid, cam), {}});
        std::uniform_int_distribution<int> n_dist(1, spec.gallery_records_per_camera);
        const int n = n_dist(rng);
        for (int k = 0; k < n; ++k) records.push_back({record_id("g", pid, cam, k), pid, cam, Split::gallery, observe(pid, cam), {}});
      }
    }
  }
  out.dataset = Dataset(std::move(records), spec.cameras);
  return out;
}

}  // namespace seqfuse

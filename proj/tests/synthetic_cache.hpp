#pragma once
// Score caches with known structure, for tests that skip the optics.

#include <algorithm>
#include <cstdio>
#include <string>

#include "d2nn/ensemble.hpp"

namespace synthetic {

/// Network k is "right" on a sample with probability skill_k, in which case
/// the true class gets a +margin boost over uniform noise in [-3, 3].
inline d2nn::ScoreCache cache(std::size_t samples, std::size_t networks, std::uint64_t seed,
                              d2nn::SplitKind split = d2nn::SplitKind::Validation, double margin = 3.5) {
  d2nn::Rng rng(seed);
  d2nn::ScoreCache c;
  c.split = split;
  c.samples = samples;
  c.networks = networks;
  c.classes = 10;
  std::vector<double> skill(networks);
  for (std::size_t k = 0; k < networks; ++k) {
    char id[32];
    std::snprintf(id, sizeof id, "syn_%03zu", k);
    c.network_ids.emplace_back(id);
    skill[k] = rng.uniform(0.1, 0.6);
  }
  c.labels.resize(samples);
  c.scores.resize(samples * networks * 10);
  for (std::size_t s = 0; s < samples; ++s) {
    c.labels[s] = static_cast<std::uint8_t>(rng.below(10));
    for (std::size_t k = 0; k < networks; ++k) {
      const bool right = rng.bernoulli(skill[k]);
      for (int cl = 0; cl < 10; ++cl) {
        double z = rng.uniform(-3.0, 3.0);
        if (right && cl == c.labels[s]) z += margin;
        c.scores[(s * networks + k) * 10 + cl] = static_cast<float>(std::clamp(z, -10.0, 10.0));
      }
    }
  }
  return c;
}

}  // namespace synthetic

#pragma once

#include "streetgen/rng.hpp"
#include "streetgen/sampler.hpp"

namespace streetgen::testing {

/// Random sample that satisfies the masking invariants.
inline sampling::PatchSample random_sample(int size, int level, Rng& rng) {
  sampling::PatchSample s;
  s.mask = sampling::generate_mask(size, rng.next());
  s.ground_truth_streets = FloatGrid(size, size);
  for (float& v : s.ground_truth_streets.values()) v = rng.uniform() < 0.2 ? 1.0f : 0.0f;
  s.context_streets = s.ground_truth_streets;
  for (std::size_t i = 0; i < s.mask.grid.size(); ++i)
    if (s.mask.grid.data()[i]) s.context_streets.data()[i] = 0.0f;
  s.elevation = FloatGrid(size, size);
  for (float& v : s.elevation.values()) v = static_cast<float>(rng.uniform(100, 200));
  s.aspect = FloatGrid(size, size);
  for (float& v : s.aspect.values()) v = rng.uniform() < 0.1 ? -1.0f : static_cast<float>(rng.uniform(0, 359.9));
  s.noise = sampling::make_noise_channel(s.mask, rng.next());
  s.junction_channel = FloatGrid(size, size, 0.0f);
  s.pattern_guidance = ByteGrid(size, size, 0);
  for (std::size_t i = 0; i < s.mask.grid.size(); ++i) {
    if (!s.mask.grid.data()[i]) continue;
    if (level >= 2 && rng.uniform() < 0.02) s.junction_channel.data()[i] = 1.0f;
    if (level >= 3) s.pattern_guidance.data()[i] = static_cast<unsigned char>(1 + rng.below(5));
  }
  s.model_level = level;
  return s;
}

}  // namespace streetgen::testing

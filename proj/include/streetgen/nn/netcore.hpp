#pragma once

#include <filesystem>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "streetgen/nn/models.hpp"
#include "streetgen/sampler.hpp"

namespace streetgen::nn {

/// Elevation enters the network relative to the patch mean, in units of this many meters.
inline constexpr double kElevationScale = 50.0;
/// Flat cells (aspect -1) are encoded below the [0, 1) compass range.
inline constexpr float kFlatAspectCode = -0.25f;
inline constexpr float kPatternScale = 5.0f;

/// Channels: streets, elevation, aspect, mask, noise, [junctions], [pattern].
template <class T>
Tensor<T> generator_input(std::span<const sampling::PatchSample* const> batch, int model_level);
template <class T>
Tensor<T> generator_input(const sampling::PatchSample& sample, int model_level);

/// Six condition channels: context streets, elevation, aspect, mask,
/// junctions, pattern. Guidance channels are zero below the levels that use them.
template <class T>
Tensor<T> discriminator_condition(std::span<const sampling::PatchSample* const> batch, int model_level);

/// Street image (N x 1) followed by the condition channels.
template <class T>
Tensor<T> discriminator_input(const Tensor<T>& streets, const Tensor<T>& condition);

/// mask * generated + (1 - mask) * context.
FloatGrid composite(const FloatGrid& generated, const FloatGrid& context, const sampling::Mask& mask);
template <class T>
Tensor<T> composite(const Tensor<T>& generated, const Tensor<T>& context, const Tensor<T>& mask);

template <class T>
Tensor<T> stack_channel(std::span<const sampling::PatchSample* const> batch,
                        FloatGrid sampling::PatchSample::*member);
template <class T>
Tensor<T> mask_tensor(std::span<const sampling::PatchSample* const> batch);

struct Checkpoint {
  GeneratorSpec generator;
  DiscriminatorSpec discriminator;
  ParamSet<float> g_params;
  ParamSet<float> d_params;
  int model_level = 1;
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
  std::uint64_t epoch = 0;
  nlohmann::json extra = nlohmann::json::object();

  static Checkpoint fresh(const GeneratorSpec& g, const DiscriminatorSpec& d, std::uint64_t seed);
  std::vector<unsigned char> serialize() const;
  static Checkpoint deserialize(std::span<const unsigned char> bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace streetgen::nn

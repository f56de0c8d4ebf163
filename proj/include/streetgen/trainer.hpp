#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "streetgen/nn/netcore.hpp"
#include "streetgen/sampler.hpp"

namespace streetgen::train {

using nn::ParamSet;
using nn::Tensor;

enum class MseNormalization { per_masked_pixel, unnormalized };

struct LossConfig {
  double alpha = 0.01;
  MseNormalization mse_normalization = MseNormalization::per_masked_pixel;
  /// Generator adversarial term log(1 - D(fake)) instead of -log D(fake).
  bool saturating = false;
  /// Discriminator sees mask * ground truth vs mask * generated instead of
  /// the full ground truth vs the composite.
  bool masked_real = false;

  void validate() const;
};

inline constexpr double kProbabilityClamp = 1e-7;

/// Masked squared error over n values; mask entries are 0 or 1.
template <class T>
T mse_loss(std::span<const T> generated, std::span<const T> ground_truth, std::span<const T> mask,
           MseNormalization normalization = MseNormalization::per_masked_pixel);
double mse_loss(const FloatGrid& generated, const FloatGrid& ground_truth, const sampling::Mask& mask,
                MseNormalization normalization = MseNormalization::per_masked_pixel);

struct AdversarialTerms {
  double d_loss = 0.0;
  double g_loss = 0.0;
};
AdversarialTerms adversarial_terms(double d_real, double d_fake, bool saturating = false);

inline double combined_objective(double mse, double g_adv, double alpha) { return mse + alpha * g_adv; }

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t t = 0;
};

/// One Adam update on flat arrays; t is the already incremented step count.
template <class T>
void adam_update(std::span<T> value, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                 const AdamConfig& config);

/// Updates every trainable parameter from its gradient. Throws naming the
/// first parameter whose gradient is not finite, before touching any value.
template <class T>
void adam_step(ParamSet<T>& params, AdamState<T>& state, const AdamConfig& config);

template <class T>
struct Gan {
  nn::Generator<T> g;
  nn::Discriminator<T> d;
  ParamSet<T> gp;
  ParamSet<T> dp;
};

Gan<float> gan_from_checkpoint(const nn::Checkpoint& c);
void store_into_checkpoint(const Gan<float>& gan, nn::Checkpoint& c);

/// Network-ready tensors of one batch.
template <class T>
struct Batch {
  Tensor<T> input;        // generator input stack
  Tensor<T> condition;    // discriminator condition channels
  Tensor<T> truth;        // ground-truth streets
  Tensor<T> mask;
  int model_level = 1;

  int size() const { return input.n(); }
};

template <class T>
Batch<T> make_batch(std::span<const sampling::PatchSample* const> samples, int model_level);

struct StepLosses {
  double mse = 0.0;
  double g_adv = 0.0;
  double d_loss = 0.0;
  double objective = 0.0;
};

/// Batch-mean discriminator loss; accumulates discriminator gradients.
template <class T>
double discriminator_objective(Gan<T>& gan, const Batch<T>& batch, const Tensor<T>& generated,
                               const LossConfig& config, bool update_sn);

/// Batch-mean mse + alpha * g_adv given a cached generator forward pass;
/// accumulates generator gradients only.
template <class T>
StepLosses generator_objective(Gan<T>& gan, const Batch<T>& batch, const Tensor<T>& generated,
                               const typename nn::Generator<T>::Cache& cache, const LossConfig& config);
template <class T>
StepLosses generator_objective(Gan<T>& gan, const Batch<T>& batch, const LossConfig& config);

struct LossRecord {
  std::uint64_t iteration = 0;
  double mse = 0.0;
  double g_adv = 0.0;
  double d_loss = 0.0;
};

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history);
std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path);

struct RunConfig {
  int epochs = 1;
  int batch_size = 8;
  /// Stops after this many iterations in total; 0 runs every epoch fully.
  std::uint64_t max_iterations = 0;
  std::uint64_t checkpoint_every = 500;
  std::filesystem::path out_dir;  // empty: nothing is written
  std::uint64_t seed = 0;
  LossConfig loss{};
  AdamConfig g_adam{};
  AdamConfig d_adam{};
  /// Both learning rates fall linearly to this fraction of their value at
  /// max_iterations. 1 keeps them constant; needs max_iterations > 0.
  double lr_final_fraction = 1.0;
  std::function<void(const LossRecord&)> on_iteration;
};

inline std::uint64_t iterations_per_epoch(std::size_t samples, int batch_size) {
  return batch_size > 0 ? samples / static_cast<std::size_t>(batch_size) : 0;
}

/// Alternating single discriminator and generator updates.
class Trainer {
 public:
  Trainer(nn::Checkpoint checkpoint, RunConfig config);

  /// One iteration on the given batch.
  LossRecord step(std::span<const sampling::PatchSample* const> batch);
  /// Full run over the samples; returns the loss history.
  std::vector<LossRecord> run(std::span<const sampling::PatchSample> samples);

  const Gan<float>& gan() const { return gan_; }
  nn::Checkpoint checkpoint() const;
  const std::vector<LossRecord>& history() const { return history_; }
  const std::vector<std::string>& lineage() const { return lineage_; }

 private:
  void write_checkpoint(const std::string& name);

  nn::Checkpoint base_;
  RunConfig config_;
  Gan<float> gan_;
  AdamState<float> g_state_, d_state_;
  std::uint64_t iteration_ = 0;
  std::uint64_t epoch_ = 0;
  std::vector<LossRecord> history_;
  std::vector<std::string> lineage_;
};

}  // namespace streetgen::train

#include "streetgen/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "streetgen/rng.hpp"

namespace streetgen::train {

using sampling::PatchSample;

void LossConfig::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw Error("alpha must be a finite value >= 0");
}

template <class T>
T mse_loss(std::span<const T> generated, std::span<const T> ground_truth, std::span<const T> mask,
           MseNormalization normalization) {
  if (generated.size() != ground_truth.size() || generated.size() != mask.size()) {
    throw Error("mse_loss: shape mismatch (" + std::to_string(generated.size()) + ", " +
                std::to_string(ground_truth.size()) + ", " + std::to_string(mask.size()) + ")");
  }
  T sum{}, count{};
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const T d = mask[i] * (generated[i] - ground_truth[i]);
    sum += d * d;
    count += mask[i];
  }
  if (normalization == MseNormalization::unnormalized) return sum;
  return sum / std::max(T(1), count);
}

double mse_loss(const FloatGrid& generated, const FloatGrid& ground_truth, const sampling::Mask& mask,
                MseNormalization normalization) {
  if (!generated.same_shape(ground_truth) || generated.width() != mask.grid.width() ||
      generated.height() != mask.grid.height()) {
    throw Error("mse_loss: shape mismatch");
  }
  std::vector<double> g(generated.values().begin(), generated.values().end());
  std::vector<double> t(ground_truth.values().begin(), ground_truth.values().end());
  std::vector<double> m(mask.grid.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = mask.grid.data()[i] ? 1.0 : 0.0;
  return mse_loss<double>(g, t, m, normalization);
}

namespace {

double clamp_probability(double p) { return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp); }

}  // namespace

AdversarialTerms adversarial_terms(double d_real, double d_fake, bool saturating) {
  const double r = clamp_probability(d_real);
  const double f = clamp_probability(d_fake);
  AdversarialTerms t;
  t.d_loss = -(std::log(r) + std::log(1.0 - f));
  t.g_loss = saturating ? std::log(1.0 - f) : -std::log(f);
  return t;
}

template <class T>
void adam_update(std::span<T> value, std::span<const T> grad, std::span<T> m, std::span<T> v, std::uint64_t t,
                 const AdamConfig& c) {
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(c.beta1, static_cast<double>(t)));
  const T c2 = static_cast<T>(1.0 - std::pow(c.beta2, static_cast<double>(t)));
  const T lr = static_cast<T>(c.lr), eps = static_cast<T>(c.eps);
  for (std::size_t i = 0; i < value.size(); ++i) {
    const T g = grad[i];
    m[i] = b1 * m[i] + (T(1) - b1) * g;
    v[i] = b2 * v[i] + (T(1) - b2) * g * g;
    const T mhat = m[i] / c1;
    const T vhat = v[i] / c2;
    value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <class T>
void adam_step(ParamSet<T>& params, AdamState<T>& state, const AdamConfig& config) {
  auto& all = params.all();
  for (const auto& p : all) {
    if (!p.trainable) continue;
    for (T g : p.grad) {
      if (!std::isfinite(g)) throw Error("non-finite gradient in parameter '" + p.name + "'");
    }
  }
  if (state.m.size() != all.size()) {
    state.m.assign(all.size(), {});
    state.v.assign(all.size(), {});
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (!all[i].trainable) continue;
      state.m[i].assign(all[i].size(), T{});
      state.v[i].assign(all[i].size(), T{});
    }
  }
  ++state.t;
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto& p = all[i];
    if (!p.trainable) continue;
    adam_update<T>(p.value, p.grad, state.m[i], state.v[i], state.t, config);
  }
}

Gan<float> gan_from_checkpoint(const nn::Checkpoint& c) {
  return Gan<float>{nn::Generator<float>(c.generator), nn::Discriminator<float>(c.discriminator), c.g_params,
                    c.d_params};
}

void store_into_checkpoint(const Gan<float>& gan, nn::Checkpoint& c) {
  c.g_params = gan.gp;
  c.d_params = gan.dp;
}

template <class T>
Batch<T> make_batch(std::span<const PatchSample* const> samples, int model_level) {
  for (const auto* s : samples) {
    if (s->model_level != model_level) {
      throw Error("sample built for model level " + std::to_string(s->model_level) + " used with level " +
                  std::to_string(model_level));
    }
  }
  Batch<T> b;
  b.input = nn::generator_input<T>(samples, model_level);
  b.condition = nn::discriminator_condition<T>(samples, model_level);
  b.truth = nn::stack_channel<T>(samples, &PatchSample::ground_truth_streets);
  b.mask = nn::mask_tensor<T>(samples);
  b.model_level = model_level;
  return b;
}

namespace {

template <class T>
Tensor<T> masked(const Tensor<T>& x, const Tensor<T>& mask) {
  Tensor<T> y = x;
  for (std::size_t k = 0; k < y.size(); ++k) y.data()[k] *= mask.data()[k];
  return y;
}

template <class T>
Tensor<T> fake_image(const Batch<T>& b, const Tensor<T>& generated, const LossConfig& c) {
  return c.masked_real ? masked(generated, b.mask) : nn::composite(generated, b.truth, b.mask);
}

/// Street images for rows [offset, offset + N) of a discriminator batch.
template <class T>
void write_d_rows(Tensor<T>& x, int offset, const Tensor<T>& streets, const Tensor<T>& condition) {
  for (int i = 0; i < streets.n(); ++i) {
    T* dst = x.sample(offset + i);
    std::copy_n(streets.sample(i), streets.sample_size(), dst);
    std::copy_n(condition.sample(i), condition.sample_size(), dst + streets.sample_size());
  }
}

}  // namespace

template <class T>
double discriminator_objective(Gan<T>& gan, const Batch<T>& b, const Tensor<T>& generated, const LossConfig& c,
                               bool update_sn) {
  const int n = b.size();
  const Tensor<T> real = c.masked_real ? masked(b.truth, b.mask) : b.truth;
  const Tensor<T> fake = fake_image(b, generated, c);
  Tensor<T> x(2 * n, 1 + b.condition.c(), b.truth.h(), b.truth.w());
  write_d_rows(x, 0, real, b.condition);
  write_d_rows(x, n, fake, b.condition);
  typename nn::Discriminator<T>::Cache cache;
  const Tensor<T> logits = gan.d.forward(gan.dp, x, &cache, update_sn);
  Tensor<T> dlogits(2 * n, 1, 1, 1);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const T pr = nn::sigmoid(logits(i, 0, 0, 0));
    const T pf = nn::sigmoid(logits(n + i, 0, 0, 0));
    loss += adversarial_terms(pr, pf).d_loss;
    dlogits(i, 0, 0, 0) = -(T(1) - pr) / static_cast<T>(n);
    dlogits(n + i, 0, 0, 0) = pf / static_cast<T>(n);
  }
  gan.d.backward(gan.dp, cache, dlogits, nullptr, true);
  return loss / n;
}

template <class T>
StepLosses generator_objective(Gan<T>& gan, const Batch<T>& b, const Tensor<T>& generated,
                               const typename nn::Generator<T>::Cache& cache, const LossConfig& c) {
  const int n = b.size();
  const std::size_t plane = generated.plane();
  Tensor<T> dgen(generated.n(), 1, generated.h(), generated.w());
  StepLosses out;
  for (int i = 0; i < n; ++i) {
    const T* g = generated.sample(i);
    const T* t = b.truth.sample(i);
    const T* m = b.mask.sample(i);
    const T mse = mse_loss<T>({g, plane}, {t, plane}, {m, plane}, c.mse_normalization);
    out.mse += static_cast<double>(mse);
    T count{};
    for (std::size_t k = 0; k < plane; ++k) count += m[k];
    const T norm = c.mse_normalization == MseNormalization::per_masked_pixel ? std::max(T(1), count) : T(1);
    const T scale = T(2) / (norm * static_cast<T>(n));
    T* d = dgen.sample(i);
    for (std::size_t k = 0; k < plane; ++k) d[k] = scale * m[k] * m[k] * (g[k] - t[k]);
  }
  out.mse /= n;

  Tensor<T> x(n, 1 + b.condition.c(), b.truth.h(), b.truth.w());
  write_d_rows(x, 0, fake_image(b, generated, c), b.condition);
  typename nn::Discriminator<T>::Cache dcache;
  const Tensor<T> logits = gan.d.forward(gan.dp, x, &dcache, false);
  Tensor<T> dlogits(n, 1, 1, 1);
  const T alpha = static_cast<T>(c.alpha);
  for (int i = 0; i < n; ++i) {
    const T pf = nn::sigmoid(logits(i, 0, 0, 0));
    out.g_adv += adversarial_terms(0.5, pf, c.saturating).g_loss;
    const T dz = c.saturating ? -pf : -(T(1) - pf);
    dlogits(i, 0, 0, 0) = alpha * dz / static_cast<T>(n);
  }
  out.g_adv /= n;
  if (c.alpha > 0.0) {
    Tensor<T> dx;
    gan.d.backward(gan.dp, dcache, dlogits, &dx, false);
    for (int i = 0; i < n; ++i) {
      const T* dimg = dx.channel(i, 0);
      const T* m = b.mask.sample(i);
      T* d = dgen.sample(i);
      for (std::size_t k = 0; k < plane; ++k) d[k] += m[k] * dimg[k];
    }
  }
  gan.g.backward(gan.gp, cache, dgen);
  out.objective = combined_objective(out.mse, out.g_adv, c.alpha);
  return out;
}

template <class T>
StepLosses generator_objective(Gan<T>& gan, const Batch<T>& b, const LossConfig& c) {
  typename nn::Generator<T>::Cache cache;
  const Tensor<T> gen = gan.g.forward(gan.gp, b.input, &cache);
  return generator_objective(gan, b, gen, cache, c);
}

#define STREETGEN_INSTANTIATE(T)                                                                                 \
  template T mse_loss<T>(std::span<const T>, std::span<const T>, std::span<const T>, MseNormalization);         \
  template void adam_update<T>(std::span<T>, std::span<const T>, std::span<T>, std::span<T>, std::uint64_t,      \
                               const AdamConfig&);                                                               \
  template void adam_step<T>(ParamSet<T>&, AdamState<T>&, const AdamConfig&);                                   \
  template Batch<T> make_batch<T>(std::span<const PatchSample* const>, int);                                     \
  template double discriminator_objective<T>(Gan<T>&, const Batch<T>&, const Tensor<T>&, const LossConfig&,     \
                                             bool);                                                              \
  template StepLosses generator_objective<T>(Gan<T>&, const Batch<T>&, const Tensor<T>&,                        \
                                             const typename nn::Generator<T>::Cache&, const LossConfig&);        \
  template StepLosses generator_objective<T>(Gan<T>&, const Batch<T>&, const LossConfig&);

STREETGEN_INSTANTIATE(float)
STREETGEN_INSTANTIATE(double)

void write_loss_csv(const std::filesystem::path& path, std::span<const LossRecord> history) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << "iteration,mse,g_adv,d_loss\n";
  char line[160];
  for (const auto& r : history) {
    std::snprintf(line, sizeof line, "%llu,%.17g,%.17g,%.17g\n", static_cast<unsigned long long>(r.iteration), r.mse,
                  r.g_adv, r.d_loss);
    f << line;
  }
}

std::vector<LossRecord> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot read " + path.string());
  std::string line;
  std::getline(f, line);
  if (line != "iteration,mse,g_adv,d_loss") throw Error("unexpected loss history header in " + path.string());
  std::vector<LossRecord> out;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    LossRecord r;
    unsigned long long it = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf", &it, &r.mse, &r.g_adv, &r.d_loss) != 4) {
      throw Error("malformed loss history row: " + line);
    }
    r.iteration = it;
    out.push_back(r);
  }
  return out;
}

Trainer::Trainer(nn::Checkpoint checkpoint, RunConfig config)
    : base_(std::move(checkpoint)), config_(std::move(config)), gan_(gan_from_checkpoint(base_)) {
  config_.loss.validate();
  if (config_.batch_size <= 0) throw Error("batch size must be positive");
  if (config_.epochs <= 0) throw Error("epoch count must be positive");
  if (!(config_.lr_final_fraction >= 0.0 && config_.lr_final_fraction <= 1.0)) {
    throw Error("final learning-rate fraction must lie in [0, 1]");
  }
  iteration_ = base_.iteration;
  epoch_ = base_.epoch;
}

LossRecord Trainer::step(std::span<const PatchSample* const> batch) {
  const Batch<float> b = make_batch<float>(batch, base_.model_level);
  gan_.gp.zero_grad();
  gan_.dp.zero_grad();
  nn::Generator<float>::Cache cache;
  const Tensor<float> gen = gan_.g.forward(gan_.gp, b.input, &cache);

  AdamConfig g_adam = config_.g_adam, d_adam = config_.d_adam;
  if (config_.lr_final_fraction != 1.0 && config_.max_iterations > 0) {
    const double progress = std::min(1.0, static_cast<double>(iteration_) / static_cast<double>(config_.max_iterations));
    const double scale = 1.0 - (1.0 - config_.lr_final_fraction) * progress;
    g_adam.lr *= scale;
    d_adam.lr *= scale;
  }
  const double d_loss = discriminator_objective(gan_, b, gen, config_.loss, true);
  adam_step(gan_.dp, d_state_, d_adam);

  const StepLosses g = generator_objective(gan_, b, gen, cache, config_.loss);
  adam_step(gan_.gp, g_state_, g_adam);

  ++iteration_;
  LossRecord r{iteration_, g.mse, g.g_adv, d_loss};
  history_.push_back(r);
  if (config_.on_iteration) config_.on_iteration(r);
  return r;
}

nn::Checkpoint Trainer::checkpoint() const {
  nn::Checkpoint c = base_;
  store_into_checkpoint(gan_, c);
  c.iteration = iteration_;
  c.epoch = epoch_;
  c.extra["alpha"] = config_.loss.alpha;
  c.extra["batch_size"] = config_.batch_size;
  c.extra["run_seed"] = config_.seed;
  return c;
}

void Trainer::write_checkpoint(const std::string& name) {
  if (config_.out_dir.empty()) return;
  checkpoint().save(config_.out_dir / name);
  lineage_.push_back(name);
  write_loss_csv(config_.out_dir / "loss_history.csv", history_);
  nlohmann::json j{{"checkpoints", lineage_}, {"iteration", iteration_}, {"model_level", base_.model_level}};
  std::ofstream(config_.out_dir / "lineage.json") << j.dump(2) << "\n";
}

std::vector<LossRecord> Trainer::run(std::span<const PatchSample> samples) {
  if (samples.empty()) throw Error("training set is empty");
  const int expected = gan_.g.spec().input_channels;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const int channels = nn::kBaseChannels + s.model_level - 1;
    if (channels != expected) {
      throw Error("sample " + std::to_string(i) + " provides " + std::to_string(channels) +
                  " generator channels (model level " + std::to_string(s.model_level) + "), network expects " +
                  std::to_string(expected));
    }
    if (s.size() != gan_.d.spec().input_size) {
      throw Error("sample " + std::to_string(i) + " has size " + std::to_string(s.size()) +
                  ", discriminator expects " + std::to_string(gan_.d.spec().input_size));
    }
  }
  const std::uint64_t per_epoch = iterations_per_epoch(samples.size(), config_.batch_size);
  if (per_epoch == 0) throw Error("fewer samples than one batch");
  std::vector<std::size_t> order(samples.size());
  std::vector<const PatchSample*> batch(static_cast<std::size_t>(config_.batch_size));
  const std::uint64_t start = iteration_;
  bool done = false;
  for (int e = 0; e < config_.epochs && !done; ++e) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(config_.seed, 1000 + epoch_));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::uint64_t it = 0; it < per_epoch; ++it) {
      for (int k = 0; k < config_.batch_size; ++k) {
        batch[static_cast<std::size_t>(k)] = &samples[order[it * config_.batch_size + k]];
      }
      step(batch);
      if (config_.checkpoint_every && iteration_ % config_.checkpoint_every == 0) {
        char name[64];
        std::snprintf(name, sizeof name, "ckpt_%08llu.bin", static_cast<unsigned long long>(iteration_));
        write_checkpoint(name);
      }
      if (config_.max_iterations && iteration_ - start >= config_.max_iterations) {
        done = true;
        break;
      }
    }
    if (!done) {
      ++epoch_;
      char name[64];
      std::snprintf(name, sizeof name, "epoch_%04llu.bin", static_cast<unsigned long long>(epoch_));
      write_checkpoint(name);
    }
  }
  write_checkpoint("final.bin");
  return history_;
}

}  // namespace streetgen::train

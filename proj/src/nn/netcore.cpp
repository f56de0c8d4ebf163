#include "streetgen/nn/netcore.hpp"

#include <numeric>

#include "streetgen/archive.hpp"
#include "streetgen/geo_ingest.hpp"
#include "streetgen/rng.hpp"

namespace streetgen::nn {

namespace {

using sampling::PatchSample;

void check_batch(std::span<const PatchSample* const> batch) {
  if (batch.empty()) throw Error("empty batch");
  const int size = batch.front()->size();
  for (const auto* s : batch) {
    if (s->size() != size) throw Error("batch mixes patch sizes");
  }
}

template <class T>
void write_common(Tensor<T>& t, int i, const PatchSample& s) {
  const std::size_t n = t.plane();
  T* streets = t.channel(i, 0);
  T* elev = t.channel(i, 1);
  T* asp = t.channel(i, 2);
  T* mask = t.channel(i, 3);
  const double mean =
      std::accumulate(s.elevation.values().begin(), s.elevation.values().end(), 0.0) / static_cast<double>(n);
  for (std::size_t k = 0; k < n; ++k) {
    streets[k] = static_cast<T>(s.context_streets.data()[k]);
    elev[k] = static_cast<T>((s.elevation.data()[k] - mean) / kElevationScale);
    const float a = s.aspect.data()[k];
    asp[k] = static_cast<T>(a < 0.0f ? kFlatAspectCode : a / 360.0f);
    mask[k] = s.mask.grid.data()[k] ? T(1) : T(0);
  }
}

template <class T>
void write_guidance(T* junctions, T* pattern, const PatchSample& s, int model_level, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) {
    if (junctions) junctions[k] = model_level >= 2 ? static_cast<T>(s.junction_channel.data()[k]) : T(0);
    if (pattern) pattern[k] = model_level >= 3 ? static_cast<T>(s.pattern_guidance.data()[k] / kPatternScale) : T(0);
  }
}

}  // namespace

template <class T>
Tensor<T> generator_input(std::span<const PatchSample* const> batch, int model_level) {
  if (model_level < 1 || model_level > 3) throw Error("model level must be 1, 2 or 3");
  check_batch(batch);
  const int size = batch.front()->size();
  Tensor<T> t(static_cast<int>(batch.size()), kBaseChannels + model_level - 1, size, size);
  for (int i = 0; i < t.n(); ++i) {
    const auto& s = *batch[i];
    write_common(t, i, s);
    T* noise = t.channel(i, 4);
    for (std::size_t k = 0; k < t.plane(); ++k) noise[k] = static_cast<T>(s.noise.data()[k]);
    write_guidance<T>(model_level >= 2 ? t.channel(i, 5) : nullptr, model_level >= 3 ? t.channel(i, 6) : nullptr, s,
                      model_level, t.plane());
  }
  return t;
}

template <class T>
Tensor<T> generator_input(const PatchSample& sample, int model_level) {
  const PatchSample* one[] = {&sample};
  return generator_input<T>(std::span<const PatchSample* const>(one), model_level);
}

template <class T>
Tensor<T> discriminator_condition(std::span<const PatchSample* const> batch, int model_level) {
  check_batch(batch);
  const int size = batch.front()->size();
  Tensor<T> t(static_cast<int>(batch.size()), 6, size, size);
  for (int i = 0; i < t.n(); ++i) {
    write_common(t, i, *batch[i]);
    write_guidance<T>(t.channel(i, 4), t.channel(i, 5), *batch[i], model_level, t.plane());
  }
  return t;
}

template <class T>
Tensor<T> discriminator_input(const Tensor<T>& streets, const Tensor<T>& condition) {
  if (streets.c() != 1) throw Error("discriminator street image must have one channel");
  return concat_channels(streets, condition);
}

FloatGrid composite(const FloatGrid& generated, const FloatGrid& context, const sampling::Mask& mask) {
  if (!generated.same_shape(context) || generated.width() != mask.grid.width() ||
      generated.height() != mask.grid.height()) {
    throw Error("composite: shape mismatch");
  }
  FloatGrid out(generated.width(), generated.height());
  for (std::size_t k = 0; k < out.size(); ++k) {
    out.data()[k] = mask.grid.data()[k] ? generated.data()[k] : context.data()[k];
  }
  return out;
}

template <class T>
Tensor<T> composite(const Tensor<T>& generated, const Tensor<T>& context, const Tensor<T>& mask) {
  if (!generated.same_shape(context) || !generated.same_shape(mask)) throw Error("composite: shape mismatch");
  Tensor<T> out(generated.n(), generated.c(), generated.h(), generated.w());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const T m = mask.data()[k];
    out.data()[k] = m * generated.data()[k] + (T(1) - m) * context.data()[k];
  }
  return out;
}

template <class T>
Tensor<T> stack_channel(std::span<const PatchSample* const> batch, FloatGrid PatchSample::*member) {
  check_batch(batch);
  const int size = batch.front()->size();
  Tensor<T> t(static_cast<int>(batch.size()), 1, size, size);
  for (int i = 0; i < t.n(); ++i) set_channel(t, i, 0, batch[i]->*member);
  return t;
}

template <class T>
Tensor<T> mask_tensor(std::span<const PatchSample* const> batch) {
  check_batch(batch);
  const int size = batch.front()->size();
  Tensor<T> t(static_cast<int>(batch.size()), 1, size, size);
  for (int i = 0; i < t.n(); ++i) {
    for (std::size_t k = 0; k < t.plane(); ++k) t.sample(i)[k] = batch[i]->mask.grid.data()[k] ? T(1) : T(0);
  }
  return t;
}

#define STREETGEN_INSTANTIATE(T)                                                                        \
  template Tensor<T> generator_input<T>(std::span<const PatchSample* const>, int);                    \
  template Tensor<T> generator_input<T>(const PatchSample&, int);                                     \
  template Tensor<T> discriminator_condition<T>(std::span<const PatchSample* const>, int);            \
  template Tensor<T> discriminator_input<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> composite<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);              \
  template Tensor<T> stack_channel<T>(std::span<const PatchSample* const>, FloatGrid PatchSample::*); \
  template Tensor<T> mask_tensor<T>(std::span<const PatchSample* const>);

STREETGEN_INSTANTIATE(float)
STREETGEN_INSTANTIATE(double)

// ---- Checkpoint ----

Checkpoint Checkpoint::fresh(const GeneratorSpec& g, const DiscriminatorSpec& d, std::uint64_t seed) {
  Checkpoint c;
  c.generator = g;
  c.discriminator = d;
  c.model_level = g.model_level();
  c.seed = seed;
  Generator<float>(g).init_params(c.g_params, mix_seed(seed, 10));
  Discriminator<float>(d).init_params(c.d_params, mix_seed(seed, 11));
  return c;
}

namespace {

void put_params(Archive& a, const ParamSet<float>& ps, nlohmann::json& list) {
  for (const auto& p : ps.all()) {
    std::vector<std::int64_t> shape(p.shape.begin(), p.shape.end());
    a.put_f32(p.name, shape, p.value);
    list.push_back({{"name", p.name}, {"trainable", p.trainable}});
  }
}

void get_params(const Archive& a, const nlohmann::json& list, ParamSet<float>& ps) {
  for (const auto& e : list) {
    const auto name = e.at("name").get<std::string>();
    if (!a.has(name)) throw Error("checkpoint is missing parameter '" + name + "'");
    const auto& entry = a.entry(name);
    std::vector<int> shape(entry.shape.begin(), entry.shape.end());
    auto& p = ps.add(name, shape, e.at("trainable").get<bool>());
    auto values = a.get_f32(name);
    if (values.size() != p.size()) throw Error("checkpoint parameter '" + name + "' has the wrong size");
    for (float v : values) {
      if (!std::isfinite(v)) throw Error("checkpoint parameter '" + name + "' holds a non-finite value");
    }
    p.value = std::move(values);
  }
}

void check_against_spec(const ParamSet<float>& ps, ParamSet<float> reference, const std::string& what) {
  for (const auto& p : reference.all()) {
    if (!ps.has(p.name)) throw Error(what + " checkpoint is missing parameter '" + p.name + "'");
    if (ps.at(p.name).shape != p.shape) throw Error(what + " parameter '" + p.name + "' does not match its spec");
  }
  if (ps.all().size() != reference.all().size()) throw Error(what + " checkpoint has unexpected parameters");
}

}  // namespace

std::vector<unsigned char> Checkpoint::serialize() const {
  Archive a;
  a.meta() = {{"kind", "checkpoint"},
              {"generator", to_json(generator)},
              {"discriminator", to_json(discriminator)},
              {"model_level", model_level},
              {"seed", seed},
              {"iteration", iteration},
              {"epoch", epoch},
              {"extra", extra},
              {"g_params", nlohmann::json::array()},
              {"d_params", nlohmann::json::array()}};
  put_params(a, g_params, a.meta()["g_params"]);
  put_params(a, d_params, a.meta()["d_params"]);
  return a.serialize();
}

Checkpoint Checkpoint::deserialize(std::span<const unsigned char> bytes) {
  const Archive a = Archive::deserialize(bytes);
  const auto& m = a.meta();
  if (m.value("kind", std::string()) != "checkpoint") throw Error("archive is not a checkpoint");
  Checkpoint c;
  try {
    c.generator = generator_spec_from_json(m.at("generator"));
    c.discriminator = discriminator_spec_from_json(m.at("discriminator"));
    c.model_level = m.at("model_level").get<int>();
    c.seed = m.at("seed").get<std::uint64_t>();
    c.iteration = m.at("iteration").get<std::uint64_t>();
    c.epoch = m.value("epoch", std::uint64_t{0});
    c.extra = m.value("extra", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint header is malformed: ") + e.what());
  }
  if (c.model_level != c.generator.model_level()) throw Error("checkpoint model level disagrees with its generator");
  get_params(a, m.at("g_params"), c.g_params);
  get_params(a, m.at("d_params"), c.d_params);
  ParamSet<float> gref, dref;
  Generator<float>(c.generator).init_params(gref, 0);
  Discriminator<float>(c.discriminator).init_params(dref, 0);
  check_against_spec(c.g_params, std::move(gref), "generator");
  check_against_spec(c.d_params, std::move(dref), "discriminator");
  return c;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file_bytes(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return deserialize(read_file_bytes(path)); }

}  // namespace streetgen::nn

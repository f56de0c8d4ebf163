#include "streetgen/nn/models.hpp"

#include <algorithm>
#include <cmath>

#include "streetgen/rng.hpp"

namespace streetgen::nn {

namespace {

int scaled(int width, int base) { return std::max(1, width * base / 64); }

LayerSpec conv(int out, int k, int stride = 1, int dilation = 1, Activation act = Activation::relu) {
  LayerSpec s;
  s.out = out;
  s.kernel = k;
  s.stride = stride;
  s.dilation = dilation;
  s.act = act;
  return s;
}

LayerSpec deconv(int out) {
  LayerSpec s;
  s.transposed = true;
  s.out = out;
  s.kernel = 4;
  s.stride = 2;
  s.pad = 1;
  return s;
}

const char* act_name(Activation a) {
  switch (a) {
    case Activation::none: return "none";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "none";
}

Activation parse_act(const std::string& s) {
  if (s == "none") return Activation::none;
  if (s == "relu") return Activation::relu;
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw Error("unknown activation '" + s + "'");
}

template <class T>
void fill_normal(std::vector<T>& v, Rng& rng, double stddev) {
  for (auto& e : v) e = static_cast<T>(rng.normal() * stddev);
}

template <class T>
void normalize(std::vector<T>& v) {
  T n{};
  for (T e : v) n += e * e;
  n = std::sqrt(n);
  if (n > T{})
    for (auto& e : v) e /= n;
}

}  // namespace

GeneratorSpec GeneratorSpec::standard(int model_level, int base) {
  if (model_level < 1 || model_level > 3) throw Error("model level must be 1, 2 or 3");
  if (base <= 0) throw Error("generator base width must be positive");
  GeneratorSpec s;
  s.input_channels = kBaseChannels + model_level - 1;
  s.encoder = {conv(scaled(64, base), 5), conv(scaled(128, base), 3, 2), conv(scaled(128, base), 3),
               conv(scaled(256, base), 3, 2)};
  for (int d : {2, 4, 8, 16}) s.mid.push_back(conv(scaled(256, base), 3, 1, d));
  s.decoder = {conv(scaled(256, base), 3), deconv(scaled(128, base)), conv(scaled(128, base), 3),
               deconv(scaled(64, base)), conv(scaled(32, base), 3)};
  s.output = conv(1, 3, 1, 1, Activation::sigmoid);
  return s;
}

int GeneratorSpec::downsample_factor() const {
  int f = 1;
  for (const auto& l : encoder) f *= l.stride;
  return f;
}

int GeneratorSpec::receptive_field_at_mid() const {
  int rf = 1, jump = 1;
  for (const auto* group : {&encoder, &mid}) {
    for (const auto& l : *group) {
      rf += l.dilation * (l.kernel - 1) * jump;
      jump *= l.stride;
    }
  }
  return rf;
}

void GeneratorSpec::validate() const {
  if (input_channels < kBaseChannels || input_channels > kBaseChannels + 2) {
    throw Error("generator input channels must be 5, 6 or 7, got " + std::to_string(input_channels));
  }
  if (encoder.empty()) throw Error("generator needs at least one encoder layer");
  int scale = 1;
  for (const auto* group : {&encoder, &mid, &decoder}) {
    for (const auto& l : *group) {
      if (l.out <= 0 || l.kernel <= 0 || l.stride <= 0 || l.dilation <= 0) throw Error("invalid generator layer");
      if (l.transposed) {
        if (scale % l.stride) throw Error("generator decoder upsamples past the input size");
        scale /= l.stride;
      } else {
        scale *= l.stride;
      }
    }
  }
  if (scale != 1) throw Error("generator decoder does not restore the input size");
  if (output.out != 1 || output.act != Activation::sigmoid || output.stride != 1 || output.transposed) {
    throw Error("generator output must be a single sigmoid channel at full resolution");
  }
}

DiscriminatorSpec DiscriminatorSpec::standard(int base, int input_size) {
  if (base <= 0) throw Error("discriminator base width must be positive");
  DiscriminatorSpec s;
  s.input_size = input_size;
  int halvings = 0;
  for (int v = input_size; v > 8; v /= 2) {
    if (v % 2) throw Error("discriminator input size must be 8 * 2^k");
    ++halvings;
  }
  if (input_size < 8 || halvings > 5) throw Error("discriminator input size must be in {8, 16, ..., 256}");
  const int widths[11] = {base, base, 2 * base, 2 * base, 4 * base, 4 * base, 4 * base, 4 * base,
                          4 * base, 4 * base, 4 * base};
  for (int i = 0; i < 11; ++i) {
    const bool down = (i % 2 == 1) && (i / 2) < halvings;
    s.body.push_back(conv(widths[i], 3, down ? 2 : 1, 1, Activation::leaky_relu));
  }
  return s;
}

void DiscriminatorSpec::validate() const {
  if (body.empty()) throw Error("discriminator needs at least one body block");
  if (!reduced_depth && body.size() != 11) throw Error("discriminator must have exactly 11 body blocks");
  int size = input_size;
  for (const auto& l : body) size = l.geometry(1).output_size(size);
  if (size != neck_size) {
    throw Error("discriminator body reduces " + std::to_string(input_size) + " to " + std::to_string(size) +
                ", expected " + std::to_string(neck_size));
  }
}

nlohmann::json to_json(const LayerSpec& s) {
  return {{"kind", s.transposed ? "deconv" : "conv"}, {"out", s.out},           {"kernel", s.kernel},
          {"stride", s.stride},                        {"dilation", s.dilation}, {"pad", s.padding()},
          {"act", act_name(s.act)}};
}

LayerSpec layer_from_json(const nlohmann::json& j) {
  LayerSpec s;
  s.transposed = j.value("kind", std::string("conv")) == "deconv";
  s.out = j.at("out").get<int>();
  s.kernel = j.value("kernel", 3);
  s.stride = j.value("stride", 1);
  s.dilation = j.value("dilation", 1);
  s.pad = j.value("pad", -1);
  s.act = parse_act(j.value("act", std::string("relu")));
  return s;
}

nlohmann::json to_json(const GeneratorSpec& s) {
  auto list = [](const std::vector<LayerSpec>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& l : v) a.push_back(to_json(l));
    return a;
  };
  return {{"input_channels", s.input_channels},
          {"encoder", list(s.encoder)},
          {"mid", list(s.mid)},
          {"decoder", list(s.decoder)},
          {"output", to_json(s.output)}};
}

GeneratorSpec generator_spec_from_json(const nlohmann::json& j) {
  GeneratorSpec s;
  s.input_channels = j.at("input_channels").get<int>();
  for (const auto& l : j.at("encoder")) s.encoder.push_back(layer_from_json(l));
  for (const auto& l : j.at("mid")) s.mid.push_back(layer_from_json(l));
  for (const auto& l : j.at("decoder")) s.decoder.push_back(layer_from_json(l));
  s.output = layer_from_json(j.at("output"));
  s.validate();
  return s;
}

nlohmann::json to_json(const DiscriminatorSpec& s) {
  nlohmann::json body = nlohmann::json::array();
  for (const auto& l : s.body) body.push_back(to_json(l));
  return {{"input_channels", s.input_channels}, {"input_size", s.input_size}, {"body", body},
          {"neck_channels", s.neck_channels},   {"neck_size", s.neck_size},   {"leaky_slope", s.leaky_slope},
          {"reduced_depth", s.reduced_depth}};
}

DiscriminatorSpec discriminator_spec_from_json(const nlohmann::json& j) {
  DiscriminatorSpec s;
  s.input_channels = j.at("input_channels").get<int>();
  s.input_size = j.at("input_size").get<int>();
  for (const auto& l : j.at("body")) s.body.push_back(layer_from_json(l));
  s.neck_channels = j.at("neck_channels").get<int>();
  s.neck_size = j.at("neck_size").get<int>();
  s.leaky_slope = j.value("leaky_slope", 0.2);
  s.reduced_depth = j.value("reduced_depth", false);
  s.validate();
  return s;
}

// ---- Generator ----

template <class T>
Generator<T>::Generator(GeneratorSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const int g = spec_.guidance_channels();
  int in = spec_.input_channels;
  int scale = 1;
  auto push = [&](const std::string& name, const LayerSpec& l, bool guided) {
    const int cin = in + (guided ? g : 0);
    layers_.push_back({name, l, cin, guided, scale});
    in = l.out;
    if (l.transposed) {
      scale /= l.stride;
    } else {
      scale *= l.stride;
    }
  };
  for (std::size_t i = 0; i < spec_.encoder.size(); ++i) push("g.enc" + std::to_string(i), spec_.encoder[i], false);
  for (std::size_t i = 0; i < spec_.mid.size(); ++i) push("g.mid" + std::to_string(i), spec_.mid[i], false);
  for (std::size_t i = 0; i < spec_.decoder.size(); ++i) push("g.dec" + std::to_string(i), spec_.decoder[i], g > 0);
  push("g.out", spec_.output, g > 0);
}

template <class T>
void Generator<T>::init_params(ParamSet<T>& params, std::uint64_t seed) const {
  Rng rng(seed);
  for (const auto& l : layers_) {
    const int k = l.spec.kernel;
    auto& w = l.spec.transposed ? params.add(l.name + ".w", {l.in_channels, l.spec.out, k, k})
                                : params.add(l.name + ".w", {l.spec.out, l.in_channels, k, k});
    double fan_in = static_cast<double>(l.in_channels) * k * k;
    if (l.spec.transposed) fan_in /= static_cast<double>(l.spec.stride * l.spec.stride);
    const double gain = l.spec.act == Activation::relu ? 2.0 : 1.0;
    fill_normal(w.value, rng, std::sqrt(gain / fan_in));
    params.add(l.name + ".b", {l.spec.out});
  }
}

template <class T>
Tensor<T> Generator<T>::forward(const ParamSet<T>& params, const Tensor<T>& x, Cache* cache) const {
  if (x.c() != spec_.input_channels) {
    throw Error("generator: expected " + std::to_string(spec_.input_channels) + " input channels, got " +
                std::to_string(x.c()));
  }
  const int f = spec_.downsample_factor();
  if (x.h() % f || x.w() % f || x.h() < f || x.w() < f) {
    throw Error("generator: spatial size " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                " is not a multiple of " + std::to_string(f));
  }
  const int g = spec_.guidance_channels();
  Tensor<T> guidance;
  if (g > 0) guidance = slice_channels(x, kBaseChannels, kBaseChannels + g);
  if (cache) {
    cache->inputs.clear();
    cache->outputs.clear();
  }
  Tensor<T> cur = x;
  for (const auto& l : layers_) {
    Tensor<T> in = l.guided ? concat_channels(cur, area_downsample(guidance, l.scale)) : std::move(cur);
    const auto& w = params.at(l.name + ".w");
    const auto& b = params.at(l.name + ".b");
    Tensor<T> y = conv_forward<T>(in, w.value, b.value, l.spec.geometry(l.in_channels));
    activate(y, l.spec.act);
    if (cache) {
      cache->inputs.push_back(std::move(in));
      cache->outputs.push_back(y);
    }
    cur = std::move(y);
  }
  return cur;
}

template <class T>
void Generator<T>::backward(ParamSet<T>& params, const Cache& cache, const Tensor<T>& dy, Tensor<T>* dx) const {
  if (cache.outputs.size() != layers_.size()) throw Error("generator backward: missing forward cache");
  Tensor<T> d = dy;
  const int g = spec_.guidance_channels();
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const auto& l = layers_[i];
    activate_backward(cache.outputs[i], l.spec.act, d);
    auto& w = params.at(l.name + ".w");
    auto& b = params.at(l.name + ".b");
    const bool need_dx = i > 0 || dx != nullptr;
    Tensor<T> din;
    conv_backward<T>(cache.inputs[i], w.value, l.spec.geometry(l.in_channels), d, w.grad, b.grad,
                     need_dx ? &din : nullptr);
    if (!need_dx) break;
    // Guidance inputs are constants; only the feature path continues.
    d = l.guided ? slice_channels(din, 0, l.in_channels - g) : std::move(din);
  }
  if (dx) *dx = std::move(d);
}

template <class T>
std::vector<ShapeTrace> Generator<T>::trace(int size) const {
  std::vector<ShapeTrace> out{{"input", spec_.input_channels, size, size}};
  int s = size;
  for (const auto& l : layers_) {
    s = l.spec.geometry(l.in_channels).output_size(s);
    out.push_back({l.name, l.spec.out, s, s});
  }
  return out;
}

// ---- Discriminator ----

template <class T>
Discriminator<T>::Discriminator(DiscriminatorSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  int in = spec_.input_channels;
  for (std::size_t i = 0; i < spec_.body.size(); ++i) {
    blocks_.push_back({"d.block" + std::to_string(i), spec_.body[i].geometry(in)});
    in = spec_.body[i].out;
  }
  blocks_.push_back({"d.neck", ConvGeometry{in, spec_.neck_channels, 1, 1, 0, 1, false}});
  head_inputs_ = spec_.neck_channels * spec_.neck_size * spec_.neck_size;
}

template <class T>
std::vector<std::string> Discriminator<T>::weight_names() const {
  std::vector<std::string> out;
  for (const auto& b : blocks_) out.push_back(b.name);
  out.push_back("d.head");
  return out;
}

template <class T>
void Discriminator<T>::init_params(ParamSet<T>& params, std::uint64_t seed) const {
  Rng rng(seed);
  auto sn_state = [&](const std::string& name, int rows, int cols) {
    auto& u = params.add(name + ".u", {rows}, false);
    fill_normal(u.value, rng, 1.0);
    normalize(u.value);
    auto& v = params.add(name + ".v", {cols}, false);
    fill_normal(v.value, rng, 1.0);
    normalize(v.value);
  };
  for (const auto& b : blocks_) {
    const auto& g = b.geom;
    auto& w = params.add(b.name + ".w", {g.out_channels, g.in_channels, g.kernel, g.kernel});
    fill_normal(w.value, rng, std::sqrt(2.0 / (g.in_channels * g.kernel * g.kernel)));
    params.add(b.name + ".b", {g.out_channels});
    sn_state(b.name, g.out_channels, g.in_channels * g.kernel * g.kernel);
  }
  auto& w = params.add("d.head.w", {1, head_inputs_});
  fill_normal(w.value, rng, std::sqrt(1.0 / head_inputs_));
  params.add("d.head.b", {1});
  sn_state("d.head", 1, head_inputs_);
}

template <class T>
Tensor<T> Discriminator<T>::forward(ParamSet<T>& params, const Tensor<T>& x, Cache* cache, bool update_sn) const {
  if (x.c() != spec_.input_channels || x.h() != spec_.input_size || x.w() != spec_.input_size) {
    throw Error("discriminator: expected N x " + std::to_string(spec_.input_channels) + " x " +
                std::to_string(spec_.input_size) + " x " + std::to_string(spec_.input_size) + " input, got " +
                x.shape_string());
  }
  if (cache) *cache = Cache{};
  const T slope = static_cast<T>(spec_.leaky_slope);
  auto normalize_weight = [&](const std::string& name, int rows, int cols) {
    auto& w = params.at(name + ".w");
    auto& u = params.at(name + ".u");
    auto& v = params.at(name + ".v");
    std::vector<T> wn(w.size());
    const T sigma = spectral_normalize<T>(w.value, rows, cols, u.value, v.value, update_sn, wn);
    return std::pair{std::move(wn), sigma};
  };
  Tensor<T> cur = x;
  for (const auto& b : blocks_) {
    const auto& g = b.geom;
    auto [wn, sigma] = normalize_weight(b.name, g.out_channels, g.in_channels * g.kernel * g.kernel);
    Tensor<T> y = conv_forward<T>(cur, wn, params.at(b.name + ".b").value, g);
    activate(y, Activation::leaky_relu, slope);
    if (cache) {
      cache->inputs.push_back(std::move(cur));
      cache->outputs.push_back(y);
      cache->normalized.push_back(std::move(wn));
      cache->sigma.push_back(sigma);
    }
    cur = std::move(y);
  }
  auto [hw, hsigma] = normalize_weight("d.head", 1, head_inputs_);
  const T hb = params.at("d.head.b").value[0];
  Tensor<T> logits(x.n(), 1, 1, 1);
  for (int i = 0; i < x.n(); ++i) {
    const T* f = cur.sample(i);
    T s = hb;
    for (int k = 0; k < head_inputs_; ++k) s += hw[k] * f[k];
    logits(i, 0, 0, 0) = s;
  }
  if (cache) {
    cache->inputs.push_back(std::move(cur));
    cache->normalized.push_back(std::move(hw));
    cache->sigma.push_back(hsigma);
  }
  return logits;
}

template <class T>
void Discriminator<T>::backward(ParamSet<T>& params, const Cache& cache, const Tensor<T>& dlogits, Tensor<T>* dx,
                                bool param_grads) const {
  if (cache.inputs.size() != blocks_.size() + 1) throw Error("discriminator backward: missing forward cache");
  const T slope = static_cast<T>(spec_.leaky_slope);
  const Tensor<T>& feat = cache.inputs.back();
  const auto& hw = cache.normalized.back();
  Tensor<T> d(feat.n(), feat.c(), feat.h(), feat.w());
  std::vector<T> ghead(param_grads ? head_inputs_ : 0, T{});
  for (int i = 0; i < feat.n(); ++i) {
    const T g = dlogits(i, 0, 0, 0);
    T* di = d.sample(i);
    const T* f = feat.sample(i);
    for (int k = 0; k < head_inputs_; ++k) {
      di[k] = g * hw[k];
      if (param_grads) ghead[k] += g * f[k];
    }
    if (param_grads) params.at("d.head.b").grad[0] += g;
  }
  auto sn_back = [&](const std::string& name, const std::vector<T>& gw, std::size_t idx, int rows, int cols) {
    spectral_normalize_backward<T>(gw, cache.normalized[idx], cache.sigma[idx], params.at(name + ".u").value,
                                   params.at(name + ".v").value, rows, cols, params.at(name + ".w").grad);
  };
  if (param_grads) sn_back("d.head", ghead, blocks_.size(), 1, head_inputs_);
  for (std::size_t k = blocks_.size(); k-- > 0;) {
    const auto& b = blocks_[k];
    const auto& g = b.geom;
    activate_backward(cache.outputs[k], Activation::leaky_relu, d, slope);
    const bool need_dx = k > 0 || dx != nullptr;
    std::vector<T> gw(param_grads ? g.weight_size() : 0, T{});
    Tensor<T> din;
    conv_backward<T>(cache.inputs[k], cache.normalized[k], g, d, gw,
                     param_grads ? std::span<T>(params.at(b.name + ".b").grad) : std::span<T>{},
                     need_dx ? &din : nullptr);
    if (param_grads) sn_back(b.name, gw, k, g.out_channels, g.in_channels * g.kernel * g.kernel);
    if (!need_dx) break;
    d = std::move(din);
  }
  if (dx) *dx = std::move(d);
}

template <class T>
std::vector<T> Discriminator<T>::normalized_weight(const ParamSet<T>& params, const std::string& name, int& rows,
                                                   int& cols) const {
  if (name == "d.head") {
    rows = 1;
    cols = head_inputs_;
  } else {
    auto it = std::find_if(blocks_.begin(), blocks_.end(), [&](const Block& b) { return b.name == name; });
    if (it == blocks_.end()) throw Error("unknown discriminator weight '" + name + "'");
    rows = it->geom.out_channels;
    cols = it->geom.in_channels * it->geom.kernel * it->geom.kernel;
  }
  auto u = params.at(name + ".u").value;
  auto v = params.at(name + ".v").value;
  std::vector<T> out(params.at(name + ".w").size());
  spectral_normalize<T>(params.at(name + ".w").value, rows, cols, u, v, false, out);
  return out;
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace streetgen::nn

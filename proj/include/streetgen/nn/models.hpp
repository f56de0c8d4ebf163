#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streetgen/nn/ops.hpp"
#include "streetgen/nn/params.hpp"
#include "streetgen/nn/tensor.hpp"

namespace streetgen::nn {

struct LayerSpec {
  bool transposed = false;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  int dilation = 1;
  int pad = -1;  // <0: same-size padding for odd kernels
  Activation act = Activation::relu;

  int padding() const { return pad >= 0 ? pad : dilation * (kernel - 1) / 2; }
  ConvGeometry geometry(int in_channels) const {
    return {in_channels, out, kernel, stride, padding(), dilation, transposed};
  }
};

/// Channel layout of the generator input stack: streets, elevation, aspect,
/// mask, noise, then the guidance channels of the model level.
inline constexpr int kBaseChannels = 5;

struct GeneratorSpec {
  int input_channels = 5;
  std::vector<LayerSpec> encoder;
  std::vector<LayerSpec> mid;
  std::vector<LayerSpec> decoder;
  LayerSpec output;

  /// Encoder-decoder with dilated middle block; `base` scales every width.
  static GeneratorSpec standard(int model_level, int base = 64);

  int guidance_channels() const { return input_channels - kBaseChannels; }
  int model_level() const { return guidance_channels() + 1; }
  int downsample_factor() const;
  /// Receptive field in input pixels of one unit after the mid block.
  int receptive_field_at_mid() const;
  std::size_t layer_count() const { return encoder.size() + mid.size() + decoder.size() + 1; }
  void validate() const;
};

struct DiscriminatorSpec {
  int input_channels = 7;
  int input_size = 256;
  std::vector<LayerSpec> body;
  int neck_channels = 256;
  int neck_size = 8;
  double leaky_slope = 0.2;
  /// Permits fewer than eleven body blocks (testing-scale networks).
  bool reduced_depth = false;

  /// Eleven conv blocks whose stride-2 steps bring `input_size` to 8.
  static DiscriminatorSpec standard(int base = 64, int input_size = 256);
  void validate() const;
};

nlohmann::json to_json(const LayerSpec& s);
LayerSpec layer_from_json(const nlohmann::json& j);
nlohmann::json to_json(const GeneratorSpec& s);
GeneratorSpec generator_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DiscriminatorSpec& s);
DiscriminatorSpec discriminator_spec_from_json(const nlohmann::json& j);

struct ShapeTrace {
  std::string layer;
  int channels, height, width;
};

template <class T>
class Generator {
 public:
  struct Layer {
    std::string name;
    LayerSpec spec;
    int in_channels;  // including concatenated guidance
    bool guided;      // guidance concatenated before this layer
    int scale;        // input resolution divisor at this layer
  };
  struct Cache {
    std::vector<Tensor<T>> inputs;
    std::vector<Tensor<T>> outputs;
  };

  explicit Generator(GeneratorSpec spec);

  const GeneratorSpec& spec() const { return spec_; }
  const std::vector<Layer>& layers() const { return layers_; }

  void init_params(ParamSet<T>& params, std::uint64_t seed) const;
  Tensor<T> forward(const ParamSet<T>& params, const Tensor<T>& x, Cache* cache = nullptr) const;
  /// Accumulates parameter gradients; writes the input gradient when dx is set.
  void backward(ParamSet<T>& params, const Cache& cache, const Tensor<T>& dy, Tensor<T>* dx = nullptr) const;
  std::vector<ShapeTrace> trace(int size) const;

 private:
  GeneratorSpec spec_;
  std::vector<Layer> layers_;
};

template <class T>
class Discriminator {
 public:
  struct Cache {
    std::vector<Tensor<T>> inputs;
    std::vector<Tensor<T>> outputs;
    std::vector<std::vector<T>> normalized;  // spectrally normalized weights
    std::vector<T> sigma;                    // 0 marks a degenerate (zero) weight
  };

  explicit Discriminator(DiscriminatorSpec spec);

  const DiscriminatorSpec& spec() const { return spec_; }
  /// Body blocks, then neck, then head.
  std::vector<std::string> weight_names() const;
  std::size_t body_blocks() const { return spec_.body.size(); }

  void init_params(ParamSet<T>& params, std::uint64_t seed) const;
  /// Logits, shape N x 1 x 1 x 1. update_sn runs one power-iteration step per
  /// weight; otherwise the stored u, v are used unchanged.
  Tensor<T> forward(ParamSet<T>& params, const Tensor<T>& x, Cache* cache = nullptr, bool update_sn = true) const;
  /// param_grads=false leaves the parameter gradients untouched.
  void backward(ParamSet<T>& params, const Cache& cache, const Tensor<T>& dlogits, Tensor<T>* dx,
                bool param_grads = true) const;

  /// Spectrally normalized matrix (rows x cols) of a named weight using the stored state.
  std::vector<T> normalized_weight(const ParamSet<T>& params, const std::string& name, int& rows, int& cols) const;

 private:
  struct Block {
    std::string name;
    ConvGeometry geom;
  };
  DiscriminatorSpec spec_;
  std::vector<Block> blocks_;  // body + neck
  int head_inputs_ = 0;
};

template <class T>
T sigmoid(T x) {
  return x >= T{} ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

}  // namespace streetgen::nn

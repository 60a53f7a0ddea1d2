// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef CMVP_ENCODER_HPP
#define CMVP_ENCODER_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "cmvp/coding_rate.hpp"
#include "cmvp/linalg.hpp"

namespace cmvp {

enum class Activation : std::uint32_t { kRelu = 0, kIdentity = 1 };

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Fixed-topology MLP: affine layers, `hidden_activation` between them, a
/// linear last layer and column-wise unit normalization on the output.
/// Gradients use the same type.
struct EncoderParams {
  std::vector<DenseLayer> layers;
  Activation hidden_activation = Activation::kRelu;

  Index input_dim() const { return layers.front().weight.cols(); }
  Index output_dim() const { return layers.back().weight.rows(); }
  void validate() const;

  /// Same shapes, all zeros.
  EncoderParams zeros_like() const;
  Index parameter_count() const;
};

struct EncoderSpec {
  Index input_dim = 0;
  std::vector<Index> hidden{64, 64};
  Index output_dim = 0;
  Activation hidden_activation = Activation::kRelu;
};

/// Kaiming-scaled Gaussian weights, zero biases.
EncoderParams init_encoder(const EncoderSpec& spec, std::uint64_t seed);

/// Intermediate values kept for backward().
struct ForwardCache {
  std::vector<Matrix> inputs;          // input to layer l
  std::vector<Matrix> pre_activations; // W_l a + b_l
  Matrix features;                     // normalized output
  Vector norms;                        // pre-normalization column norms
};

FeatureMatrix forward(const EncoderParams& params, const Matrix& x, ForwardCache* cache = nullptr);

/// Parameter gradient of a loss whose gradient w.r.t. the output features is `upstream`.
EncoderParams backward(const EncoderParams& params, const ForwardCache& cache,
                       const Matrix& upstream);

enum class OptimizerMethod : std::uint32_t { kAdam = 0, kSgd = 1 };

struct OptimizerState {
  OptimizerMethod method = OptimizerMethod::kAdam;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  EncoderParams first_moment;
  EncoderParams second_moment;
};

OptimizerState make_optimizer(const EncoderParams& params, OptimizerMethod method,
                              double learning_rate, double weight_decay);

/// Adam or SGD with decoupled weight decay: theta <- theta - lr * (update + wd * theta).
void optimizer_step(OptimizerState& state, EncoderParams& params, const EncoderParams& grads);

/// Encoder-free mode: z <- normalize_columns(z - step * grad).
FeatureMatrix direct_feature_step(const FeatureMatrix& z, const Matrix& grad, double step_size);

// Checkpoint, little-endian: "MCRE" | u16 version=1 | u32 layer count | u32 activation
//   then per layer: u32 out | u32 in | out*in f64 row-major weights | out f64 bias
std::vector<std::uint8_t> encode_encoder(const EncoderParams& params);
EncoderParams decode_encoder(const std::vector<std::uint8_t>& bytes);
void save_encoder(const EncoderParams& params, const std::string& path);
EncoderParams load_encoder(const std::string& path);

}  // namespace cmvp

#endif  // CMVP_ENCODER_HPP

// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmvp/encoder.hpp"

#include <cmath>
#include <sstream>

#include "byte_io.hpp"
#include "cmvp/rng.hpp"

namespace cmvp {

void EncoderParams::validate() const {
  require(!layers.empty(), ErrorCode::kConfigError, "encoder has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    require(layer.weight.rows() >= 1 && layer.weight.cols() >= 1, ErrorCode::kConfigError,
            "empty encoder layer");
    require(layer.bias.size() == layer.weight.rows(), ErrorCode::kConfigError,
            "bias length does not match layer output");
    if (l > 0) {
      require(layer.weight.cols() == layers[l - 1].weight.rows(), ErrorCode::kConfigError,
              "encoder layer shapes do not chain");
    }
    require(layer.weight.allFinite() && layer.bias.allFinite(), ErrorCode::kInvalidMatrix,
            "non-finite encoder parameters");
  }
}

EncoderParams EncoderParams::zeros_like() const {
  EncoderParams out;
  out.hidden_activation = hidden_activation;
  out.layers.reserve(layers.size());
  for (const auto& layer : layers) {
    out.layers.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                          Vector::Zero(layer.bias.size())});
  }
  return out;
}

Index EncoderParams::parameter_count() const {
  Index n = 0;
  for (const auto& layer : layers) n += layer.weight.size() + layer.bias.size();
  return n;
}

EncoderParams init_encoder(const EncoderSpec& spec, std::uint64_t seed) {
  require(spec.input_dim >= 1 && spec.output_dim >= 1, ErrorCode::kConfigError,
          "encoder dimensions must be positive");
  std::vector<Index> sizes{spec.input_dim};
  sizes.insert(sizes.end(), spec.hidden.begin(), spec.hidden.end());
  sizes.push_back(spec.output_dim);

  Rng rng(seed);
  EncoderParams params;
  params.hidden_activation = spec.hidden_activation;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    require(sizes[l + 1] >= 1, ErrorCode::kConfigError, "hidden sizes must be positive");
    const bool last = l + 2 == sizes.size();
    const double gain = (last || spec.hidden_activation == Activation::kIdentity) ? 1.0 : 2.0;
    const double stddev = std::sqrt(gain / static_cast<double>(sizes[l]));
    params.layers.push_back({rng.gaussian(sizes[l + 1], sizes[l], stddev), Vector::Zero(sizes[l + 1])});
  }
  return params;
}

FeatureMatrix forward(const EncoderParams& params, const Matrix& x, ForwardCache* cache) {
  require(x.rows() == params.input_dim(), ErrorCode::kDimensionMismatch,
          "encoder input dimension mismatch");
  require(x.allFinite(), ErrorCode::kInvalidMatrix, "non-finite encoder input");
  if (cache) {
    cache->inputs.clear();
    cache->pre_activations.clear();
  }
  Matrix a = x;
  const std::size_t n = params.layers.size();
  for (std::size_t l = 0; l < n; ++l) {
    const auto& layer = params.layers[l];
    Matrix pre = layer.weight * a;
    pre.colwise() += layer.bias;
    if (cache) {
      cache->inputs.push_back(std::move(a));
      cache->pre_activations.push_back(pre);
    }
    if (l + 1 < n && params.hidden_activation == Activation::kRelu) {
      a = pre.cwiseMax(0.0);
    } else {
      a = std::move(pre);
    }
  }

  Vector norms = a.colwise().norm().transpose();
  for (Index j = 0; j < a.cols(); ++j) {
    if (!(norms(j) > 0.0) || !std::isfinite(norms(j))) {
      fail(ErrorCode::kNumericalFailure,
           "encoder output column " + std::to_string(j) + " cannot be normalized");
    }
    a.col(j) /= norms(j);
  }
  if (cache) {
    cache->features = a;
    cache->norms = std::move(norms);
  }
  return FeatureMatrix(std::move(a));
}

EncoderParams backward(const EncoderParams& params, const ForwardCache& cache,
                       const Matrix& upstream) {
  const std::size_t n = params.layers.size();
  require(cache.inputs.size() == n && cache.pre_activations.size() == n, ErrorCode::kInvalidArgument,
          "forward cache does not match encoder");
  require(upstream.rows() == cache.features.rows() && upstream.cols() == cache.features.cols(),
          ErrorCode::kDimensionMismatch, "upstream gradient shape mismatch");

  // Jacobian of h -> h / |h| is (I - z z^T) / |h|.
  const Matrix& z = cache.features;
  const Eigen::RowVectorXd radial = (z.cwiseProduct(upstream)).colwise().sum();
  Matrix delta = upstream - z * radial.asDiagonal();
  delta = delta * cache.norms.cwiseInverse().asDiagonal();

  EncoderParams grads = params.zeros_like();
  for (std::size_t l = n; l-- > 0;) {
    if (l + 1 < n && params.hidden_activation == Activation::kRelu) {
      delta = delta.cwiseProduct((cache.pre_activations[l].array() > 0.0).cast<double>().matrix());
    }
    grads.layers[l].weight.noalias() = delta * cache.inputs[l].transpose();
    grads.layers[l].bias = delta.rowwise().sum();
    if (!grads.layers[l].weight.allFinite() || !grads.layers[l].bias.allFinite()) {
      fail(ErrorCode::kNumericalFailure, "non-finite gradient in encoder layer " + std::to_string(l));
    }
    if (l > 0) delta = params.layers[l].weight.transpose() * delta;
  }
  return grads;
}

OptimizerState make_optimizer(const EncoderParams& params, OptimizerMethod method,
                              double learning_rate, double weight_decay) {
  require(learning_rate > 0.0 && weight_decay >= 0.0, ErrorCode::kConfigError,
          "learning rate must be positive and weight decay non-negative");
  OptimizerState state;
  state.method = method;
  state.learning_rate = learning_rate;
  state.weight_decay = weight_decay;
  state.first_moment = params.zeros_like();
  state.second_moment = params.zeros_like();
  return state;
}

namespace {

template <typename Param, typename Grad, typename Moment>
void update_tensor(const OptimizerState& s, double bias1, double bias2, Param& theta,
                   const Grad& g, Moment& m, Moment& v) {
  const double lr = s.learning_rate;
  if (s.method == OptimizerMethod::kAdam) {
    m = s.beta1 * m + (1.0 - s.beta1) * g;
    v = s.beta2 * v + (1.0 - s.beta2) * g.cwiseAbs2();
    const auto m_hat = m / bias1;
    const auto v_hat = v / bias2;
    theta = theta * (1.0 - lr * s.weight_decay) -
            lr * (m_hat.array() / (v_hat.array().sqrt() + s.epsilon)).matrix();
  } else {
    theta = theta * (1.0 - lr * s.weight_decay) - lr * g;
  }
}

}  // namespace

void optimizer_step(OptimizerState& state, EncoderParams& params, const EncoderParams& grads) {
  require(grads.layers.size() == params.layers.size() &&
              state.first_moment.layers.size() == params.layers.size(),
          ErrorCode::kDimensionMismatch, "optimizer state does not match parameters");
  ++state.step;
  const double bias1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bias2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& p = params.layers[l];
    const auto& g = grads.layers[l];
    require(g.weight.rows() == p.weight.rows() && g.weight.cols() == p.weight.cols() &&
                g.bias.size() == p.bias.size(),
            ErrorCode::kDimensionMismatch, "gradient shape mismatch");
    update_tensor(state, bias1, bias2, p.weight, g.weight, state.first_moment.layers[l].weight,
                  state.second_moment.layers[l].weight);
    update_tensor(state, bias1, bias2, p.bias, g.bias, state.first_moment.layers[l].bias,
                  state.second_moment.layers[l].bias);
  }
}

FeatureMatrix direct_feature_step(const FeatureMatrix& z, const Matrix& grad, double step_size) {
  require(grad.rows() == z.feature_dim() && grad.cols() == z.sample_count(),
          ErrorCode::kDimensionMismatch, "gradient shape mismatch");
  return FeatureMatrix::normalized(z.matrix() - step_size * grad);
}

std::vector<std::uint8_t> encode_encoder(const EncoderParams& params) {
  params.validate();
  detail::ByteWriter w;
  w.raw("MCRE");
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(params.layers.size()));
  w.u32(static_cast<std::uint32_t>(params.hidden_activation));
  for (const auto& layer : params.layers) {
    w.u32(static_cast<std::uint32_t>(layer.weight.rows()));
    w.u32(static_cast<std::uint32_t>(layer.weight.cols()));
    for (Index i = 0; i < layer.weight.rows(); ++i)
      for (Index j = 0; j < layer.weight.cols(); ++j) w.f64(layer.weight(i, j));
    for (Index i = 0; i < layer.bias.size(); ++i) w.f64(layer.bias(i));
  }
  return std::move(w.bytes());
}

EncoderParams decode_encoder(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, ErrorCode::kIoError);
  r.expect_tag("MCRE");
  require(r.u16() == 1, ErrorCode::kIoError, "unsupported encoder checkpoint version");
  const std::uint32_t count = r.u32();
  const std::uint32_t activation = r.u32();
  require(activation <= 1, ErrorCode::kIoError, "unknown activation tag");
  EncoderParams params;
  params.hidden_activation = static_cast<Activation>(activation);
  for (std::uint32_t l = 0; l < count; ++l) {
    const std::uint32_t out = r.u32();
    const std::uint32_t in = r.u32();
    r.need_items(static_cast<std::uint64_t>(out) * in + out, 8);
    DenseLayer layer{Matrix(out, in), Vector(out)};
    for (std::uint32_t i = 0; i < out; ++i)
      for (std::uint32_t j = 0; j < in; ++j) layer.weight(i, j) = r.f64();
    for (std::uint32_t i = 0; i < out; ++i) layer.bias(i) = r.f64();
    params.layers.push_back(std::move(layer));
  }
  require(r.at_end(), ErrorCode::kIoError, "trailing bytes in encoder checkpoint");
  params.validate();
  return params;
}

void save_encoder(const EncoderParams& params, const std::string& path) {
  detail::write_file_bytes(path, encode_encoder(params));
}

EncoderParams load_encoder(const std::string& path) {
  return decode_encoder(detail::read_file_bytes(path));
}

}  // namespace cmvp

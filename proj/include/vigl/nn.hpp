#pragma once

#include "vigl/tensor.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vigl {

enum class Activation { kIdentity, kRelu, kSigmoid, kTanh };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation act);
Tensor apply(Activation act, const Tensor& x);

struct DenseLayer {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out
  Activation activation = Activation::kIdentity;
};

/// Fully connected feed-forward network. Weights are Glorot-uniform, biases zero.
class Mlp {
 public:
  Mlp() = default;
  /// dims = {in, h1, ..., out}; one activation per layer.
  Mlp(std::span<const int> dims, std::span<const Activation> activations, std::mt19937_64& rng);
  explicit Mlp(std::vector<DenseLayer> layers);

  Tensor forward(const Tensor& batch) const;
  Matrix forward_values(const Matrix& batch) const;

  int input_dim() const;
  int output_dim() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<Tensor> parameters() const;

 private:
  std::vector<DenseLayer> layers_;
};

/// Input segment of a TowerNet: `encode` segments pass through their own
/// 2-layer encoder before concatenation; the rest are used as-is.
struct Segment {
  int dim = 0;
  bool encode = false;
};

struct NetShape {
  int hidden = 64;
  int embed = 32;
  int head_hidden = 64;
  Activation activation = Activation::kTanh;
};

/// Per-segment encoders followed by a head MLP over the concatenation. Used
/// for decoders, critics and policies: each image-like input gets its own
/// 2-layer tower and the joined features go through the head.
class TowerNet {
 public:
  TowerNet() = default;
  TowerNet(std::vector<Segment> segments, int output_dim, const NetShape& shape, std::mt19937_64& rng);

  /// `batch` holds every segment's columns, in segment order.
  Tensor forward(const Tensor& batch) const;

  int input_dim() const { return input_dim_; }
  int output_dim() const { return head_.output_dim(); }
  const std::vector<Segment>& segments() const { return segments_; }
  std::vector<Tensor> parameters() const;

 private:
  std::vector<Segment> segments_;
  std::vector<Mlp> encoders_;  // parallel to segments_, empty Mlp when not encoded
  Mlp head_;
  int input_dim_ = 0;
};

// ---------------------------------------------------------------------------
// Optimization

enum class OptimizerMethod { kSgd, kAdam };
enum class Direction { kDescent, kAscent };

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::kAdam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First-order optimizer over a fixed parameter list.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<Tensor> params);

  /// Moves every parameter along -lr*g (descent) or +lr*g (ascent) using the
  /// gradients currently stored on the parameters. Missing grads count as 0.
  void step(Direction direction);
  void zero_grad();

  const OptimizerConfig& config() const { return config_; }
  std::int64_t steps() const { return t_; }
  const std::vector<Tensor>& parameters() const { return params_; }

 private:
  OptimizerConfig config_;
  std::vector<Tensor> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t t_ = 0;
};

/// Rescales gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<const Tensor> params, double max_norm = 1.0);
double grad_norm(std::span<const Tensor> params);

/// Exponential moving average of parameter values.
class EmaShadow {
 public:
  EmaShadow() = default;
  EmaShadow(std::span<const Tensor> params, double rate = 0.99);

  /// shadow <- rate * shadow + (1 - rate) * param
  void update(std::span<const Tensor> params);
  const std::vector<Matrix>& values() const { return shadow_; }
  std::vector<Matrix>& mutable_values() { return shadow_; }
  double rate() const { return rate_; }

 private:
  std::vector<Matrix> shadow_;
  double rate_ = 0.99;
};

void ema_update(std::span<Matrix> shadow, std::span<const Tensor> params, double rate);

// ---------------------------------------------------------------------------
// Flat parameter access and checkpoints.

std::vector<double> flatten_values(std::span<const Tensor> params);
std::vector<double> flatten_grads(std::span<const Tensor> params);
void assign_flat(std::span<const Tensor> params, std::span<const double> flat);
std::vector<Matrix> snapshot(std::span<const Tensor> params);
void restore(std::span<const Tensor> params, std::span<const Matrix> values);

/// Binary layout: "VIGLCKPT" magic, uint32 version, uint32 metadata length,
/// metadata bytes (key=value lines), uint64 tensor count, then per tensor
/// uint64 rows, uint64 cols, rows*cols little-endian doubles (row-major).
void write_checkpoint(std::ostream& out, std::string_view metadata, std::span<const Matrix> tensors);
struct Checkpoint {
  std::string metadata;
  std::vector<Matrix> tensors;
};
Checkpoint read_checkpoint(std::istream& in);

}  // namespace vigl

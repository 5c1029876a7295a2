#include "vigl/nn.hpp"

#include "vigl/errors.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace vigl {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
  }
  return "identity";
}

Tensor apply(Activation act, const Tensor& x) {
  switch (act) {
    case Activation::kIdentity: return x;
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kTanh: return tanh(x);
  }
  return x;
}

// ---------------------------------------------------------------------------

Mlp::Mlp(std::span<const int> dims, std::span<const Activation> activations, std::mt19937_64& rng) {
  if (dims.size() < 2) throw ConfigError("Mlp needs at least input and output dims");
  if (activations.size() != dims.size() - 1) throw ConfigError("Mlp needs one activation per layer");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const int in = dims[i];
    const int out = dims[i + 1];
    if (in <= 0 || out <= 0) throw ConfigError("Mlp dims must be positive");
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> init(-limit, limit);
    Matrix w(in, out);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = init(rng);
    }
    layers_.push_back({Tensor::parameter(std::move(w)), Tensor::parameter(Matrix::Zero(1, out)), activations[i]});
  }
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    if (layers_[i - 1].weight.cols() != layers_[i].weight.rows()) {
      throw ShapeError("Mlp: consecutive layer dimensions disagree");
    }
  }
}

Tensor Mlp::forward(const Tensor& batch) const {
  if (batch.cols() != input_dim()) {
    throw ShapeError("Mlp::forward: expected " + std::to_string(input_dim()) + " input columns, got " +
                     std::to_string(batch.cols()));
  }
  Tensor h = batch;
  for (const auto& layer : layers_) {
    h = apply(layer.activation, add_row(matmul(h, layer.weight), layer.bias));
  }
  return h;
}

Matrix Mlp::forward_values(const Matrix& batch) const {
  NoGradGuard guard;
  return forward(Tensor::constant(batch)).value();
}

int Mlp::input_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.rows());
}

int Mlp::output_dim() const {
  return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.cols());
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (const auto& layer : layers_) {
    out.push_back(layer.weight);
    out.push_back(layer.bias);
  }
  return out;
}

// ---------------------------------------------------------------------------

TowerNet::TowerNet(std::vector<Segment> segments, int output_dim, const NetShape& shape, std::mt19937_64& rng)
    : segments_(std::move(segments)) {
  if (segments_.empty()) throw ConfigError("TowerNet needs at least one input segment");
  int joined = 0;
  for (const auto& seg : segments_) {
    if (seg.dim <= 0) throw ConfigError("TowerNet segment dims must be positive");
    input_dim_ += seg.dim;
    if (seg.encode) {
      const int dims[] = {seg.dim, shape.hidden, shape.embed};
      const Activation acts[] = {shape.activation, shape.activation};
      encoders_.emplace_back(dims, acts, rng);
      joined += shape.embed;
    } else {
      encoders_.emplace_back();
      joined += seg.dim;
    }
  }
  if (shape.head_hidden > 0) {
    const int dims[] = {joined, shape.head_hidden, output_dim};
    const Activation acts[] = {shape.activation, Activation::kIdentity};
    head_ = Mlp(dims, acts, rng);
  } else {
    const int dims[] = {joined, output_dim};
    const Activation acts[] = {Activation::kIdentity};
    head_ = Mlp(dims, acts, rng);
  }
}

Tensor TowerNet::forward(const Tensor& batch) const {
  if (batch.cols() != input_dim_) {
    throw ShapeError("TowerNet::forward: expected " + std::to_string(input_dim_) + " input columns, got " +
                     std::to_string(batch.cols()));
  }
  if (segments_.size() == 1) {
    return head_.forward(segments_[0].encode ? encoders_[0].forward(batch) : batch);
  }
  std::vector<Tensor> parts;
  parts.reserve(segments_.size());
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    Tensor part = slice_cols(batch, at, segments_[i].dim);
    at += segments_[i].dim;
    parts.push_back(segments_[i].encode ? encoders_[i].forward(part) : part);
  }
  return head_.forward(concat_cols(parts));
}

std::vector<Tensor> TowerNet::parameters() const {
  std::vector<Tensor> out;
  for (const auto& enc : encoders_) {
    for (auto& p : enc.parameters()) out.push_back(p);
  }
  for (auto& p : head_.parameters()) out.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------

Optimizer::Optimizer(OptimizerConfig config, std::vector<Tensor> params)
    : config_(config), params_(std::move(params)) {
  if (!(config_.learning_rate > 0)) throw ConfigError("learning rate must be positive");
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Optimizer::step(Direction direction) {
  ++t_;
  const double sign = direction == Direction::kDescent ? -1.0 : 1.0;
  const double lr = config_.learning_rate;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    const Matrix& g = p.grad();
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw ShapeError("Optimizer: grad shape differs from parameter");
    if (config_.method == OptimizerMethod::kSgd) {
      p.mutable_value() += sign * lr * g;
      continue;
    }
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const auto m_hat = m_[i].array() / bc1;
    const auto v_hat = v_[i].array() / bc2;
    p.mutable_value().array() += sign * lr * m_hat / (v_hat.sqrt() + config_.epsilon);
  }
}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double grad_norm(std::span<const Tensor> params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.has_grad()) sq += p.grad().squaredNorm();
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<const Tensor> params, double max_norm) {
  if (!(max_norm > 0)) throw ContractError("clip_grad_norm: max_norm must be positive");
  const double norm = grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto p : params) {
      if (p.has_grad()) p.mutable_grad() *= factor;
    }
  }
  return norm;
}

EmaShadow::EmaShadow(std::span<const Tensor> params, double rate) : shadow_(snapshot(params)), rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("EMA rate must lie in [0, 1)");
}

void EmaShadow::update(std::span<const Tensor> params) { ema_update(shadow_, params, rate_); }

void ema_update(std::span<Matrix> shadow, std::span<const Tensor> params, double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("EMA rate must lie in [0, 1)");
  if (shadow.size() != params.size()) throw ShapeError("ema_update: parameter count differs");
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    const Matrix& v = params[i].value();
    if (shadow[i].rows() != v.rows() || shadow[i].cols() != v.cols()) throw ShapeError("ema_update: shape differs");
    shadow[i] = rate * shadow[i] + (1.0 - rate) * v;
  }
}

// ---------------------------------------------------------------------------

std::vector<double> flatten_values(std::span<const Tensor> params) {
  std::vector<double> out;
  for (const auto& p : params) out.insert(out.end(), p.value().data(), p.value().data() + p.size());
  return out;
}

std::vector<double> flatten_grads(std::span<const Tensor> params) {
  std::vector<double> out;
  for (const auto& p : params) {
    if (p.has_grad()) {
      out.insert(out.end(), p.grad().data(), p.grad().data() + p.size());
    } else {
      out.insert(out.end(), static_cast<std::size_t>(p.size()), 0.0);
    }
  }
  return out;
}

void assign_flat(std::span<const Tensor> params, std::span<const double> flat) {
  std::size_t at = 0;
  for (auto p : params) {
    const auto n = static_cast<std::size_t>(p.size());
    if (at + n > flat.size()) throw ShapeError("assign_flat: vector too short");
    std::memcpy(p.mutable_value().data(), flat.data() + at, n * sizeof(double));
    at += n;
  }
  if (at != flat.size()) throw ShapeError("assign_flat: vector too long");
}

std::vector<Matrix> snapshot(std::span<const Tensor> params) {
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.value());
  return out;
}

void restore(std::span<const Tensor> params, std::span<const Matrix> values) {
  if (params.size() != values.size()) throw ShapeError("restore: tensor count differs");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    if (p.rows() != values[i].rows() || p.cols() != values[i].cols()) throw ShapeError("restore: shape differs");
    p.mutable_value() = values[i];
  }
}

namespace {

constexpr char kMagic[8] = {'V', 'I', 'G', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, std::size_t& offset) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("checkpoint truncated", offset);
  offset += sizeof(T);
  return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, std::string_view metadata, std::span<const Matrix> tensors) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(metadata.size()));
  out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  put<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(t.cols()));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::size_t offset = 0;
  char magic[8];
  if (!in.read(magic, sizeof(magic))) throw FormatError("checkpoint truncated", offset);
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw FormatError("bad checkpoint magic", offset);
  offset += sizeof(magic);
  const auto version = get<std::uint32_t>(in, offset);
  if (version != kVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version), offset - 4);
  const auto meta_len = get<std::uint32_t>(in, offset);
  Checkpoint ck;
  ck.metadata.resize(meta_len);
  if (!in.read(ck.metadata.data(), meta_len)) throw FormatError("checkpoint truncated in metadata", offset);
  offset += meta_len;
  const auto count = get<std::uint64_t>(in, offset);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto rows = get<std::uint64_t>(in, offset);
    const auto cols = get<std::uint64_t>(in, offset);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const auto bytes = static_cast<std::streamsize>(rows * cols * sizeof(double));
    if (!in.read(reinterpret_cast<char*>(m.data()), bytes)) throw FormatError("checkpoint truncated in tensor data", offset);
    offset += static_cast<std::size_t>(bytes);
    ck.tensors.push_back(std::move(m));
  }
  return ck;
}

}  // namespace vigl

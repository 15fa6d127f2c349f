#include "dflex/nn.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "dflex/error.hpp"

namespace dflex::nn {

namespace {

constexpr char kMagic[8] = {'D', 'F', 'L', 'X', 'N', 'N', '0', '1'};
constexpr std::uint64_t kMaxCount = 1ULL << 32;

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void put_name(std::string& out, const std::string& s) {
  put_u64(out, s.size());
  out += s;
}

class Reader {
 public:
  Reader(std::string data, std::string file) : data_(std::move(data)), file_(std::move(file)) {}

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(b)])) << (8 * b);
    }
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  /// A count of items that each occupy at least `item_bytes` of what remains.
  std::uint64_t count(std::size_t item_bytes = 8) {
    const std::uint64_t n = u64();
    if (n > kMaxCount || n * item_bytes > data_.size() - pos_) bad("implausible count " + std::to_string(n));
    return n;
  }
  std::string name() {
    const auto n = static_cast<std::size_t>(count(1));
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void magic() {
    need(sizeof kMagic);
    if (std::memcmp(data_.data(), kMagic, sizeof kMagic) != 0) bad("bad magic");
    pos_ += sizeof kMagic;
  }
  void end() const {
    if (pos_ != data_.size()) bad("trailing bytes");
  }
  [[noreturn]] void bad(const std::string& what) const {
    fail(ErrorCode::MissingArtifact, file_ + ": " + what);
  }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) bad("truncated");
  }
  std::string data_;
  std::string file_;
  std::size_t pos_ = 0;
};

}  // namespace

Mlp::Mlp(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) fail(ErrorCode::ShapeMismatch, "an MLP needs input and output sizes");
  Eigen::Index total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] <= 0 || sizes_[l + 1] <= 0) fail(ErrorCode::ShapeMismatch, "layer widths must be positive");
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1] + sizes_[l + 1];
  }
  params_ = VectorXd::Zero(total);
}

Mlp Mlp::random(std::vector<int> sizes, std::mt19937_64& rng, double out_scale) {
  Mlp net(std::move(sizes));
  for (int l = 0; l < net.num_layers(); ++l) {
    const int in = net.sizes_[static_cast<std::size_t>(l)];
    const int out = net.sizes_[static_cast<std::size_t>(l) + 1];
    const double limit = std::sqrt(6.0 / (in + out)) * (l + 1 == net.num_layers() ? out_scale : 1.0);
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto w = net.weight(l);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
    }
  }
  return net;
}

Eigen::Map<MatrixXd> Mlp::weight(int layer) {
  const auto l = static_cast<std::size_t>(layer);
  return {params_.data() + weight_offset(layer), sizes_[l + 1], sizes_[l]};
}

Eigen::Map<const MatrixXd> Mlp::weight(int layer) const {
  const auto l = static_cast<std::size_t>(layer);
  return {params_.data() + weight_offset(layer), sizes_[l + 1], sizes_[l]};
}

Eigen::Map<VectorXd> Mlp::bias(int layer) {
  const auto l = static_cast<std::size_t>(layer);
  return {params_.data() + weight_offset(layer) + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1], sizes_[l + 1]};
}

Eigen::Map<const VectorXd> Mlp::bias(int layer) const {
  const auto l = static_cast<std::size_t>(layer);
  return {params_.data() + weight_offset(layer) + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1], sizes_[l + 1]};
}

MatrixXd Mlp::forward(const MatrixXd& x) const {
  Cache cache;
  return forward(x, cache);
}

MatrixXd Mlp::forward(const MatrixXd& x, Cache& cache) const {
  if (sizes_.empty()) fail(ErrorCode::ShapeMismatch, "network has no layers");
  if (x.rows() != input_size()) {
    fail(ErrorCode::ShapeMismatch, "input has " + std::to_string(x.rows()) + " rows, network expects " +
                                       std::to_string(input_size()));
  }
  cache.activations.resize(static_cast<std::size_t>(num_layers()) + 1);
  cache.activations[0] = x;
  for (int l = 0; l < num_layers(); ++l) {
    const auto lu = static_cast<std::size_t>(l);
    MatrixXd z = weight(l) * cache.activations[lu];
    z.colwise() += bias(l);
    // tanh(z) = 1 - 2 / (exp(2z) + 1)
    if (l + 1 < num_layers()) z = (1.0 - 2.0 / ((2.0 * z.array()).exp() + 1.0)).matrix();
    cache.activations[lu + 1] = std::move(z);
  }
  return cache.activations.back();
}

VectorXd Mlp::predict(const VectorXd& x) const {
  const MatrixXd out = forward(MatrixXd(x));
  return out.col(0);
}

MatrixXd Mlp::backward(const Cache& cache, const MatrixXd& upstream, VectorXd& grad) const {
  if (cache.activations.size() != static_cast<std::size_t>(num_layers()) + 1) {
    fail(ErrorCode::ShapeMismatch, "cache does not match the network");
  }
  const Eigen::Index batch = cache.activations[0].cols();
  if (upstream.rows() != output_size() || upstream.cols() != batch) {
    fail(ErrorCode::ShapeMismatch, "upstream gradient shape does not match the output");
  }
  if (grad.size() == 0) grad = VectorXd::Zero(num_params());
  if (grad.size() != num_params()) fail(ErrorCode::ShapeMismatch, "gradient buffer has the wrong size");

  MatrixXd delta = upstream;
  for (int l = num_layers() - 1; l >= 0; --l) {
    const auto lu = static_cast<std::size_t>(l);
    const MatrixXd& in = cache.activations[lu];
    const Eigen::Index off = weight_offset(l);
    const int rows = sizes_[lu + 1];
    const int cols = sizes_[lu];
    Eigen::Map<MatrixXd>(grad.data() + off, rows, cols).noalias() += delta * in.transpose();
    Eigen::Map<VectorXd>(grad.data() + off + static_cast<Eigen::Index>(rows) * cols, rows) += delta.rowwise().sum();
    MatrixXd back = weight(l).transpose() * delta;
    if (l > 0) back.array() *= 1.0 - in.array().square();
    delta = std::move(back);
  }
  return delta;
}

void Mlp::copy_params_from(const Mlp& other) {
  if (other.sizes_ != sizes_) fail(ErrorCode::ShapeMismatch, "networks differ in shape");
  params_ = other.params_;
}

void Mlp::soft_update_from(const Mlp& other, double tau) {
  if (other.sizes_ != sizes_) fail(ErrorCode::ShapeMismatch, "networks differ in shape");
  params_ = (1.0 - tau) * params_ + tau * other.params_;
}

VectorXd mlp_gradient(const Mlp& net, const VectorXd& input, const VectorXd& upstream) {
  Mlp::Cache cache;
  net.forward(MatrixXd(input), cache);
  VectorXd grad;
  net.backward(cache, MatrixXd(upstream), grad);
  return grad;
}

Adam::Adam(Eigen::Index num_params, AdamConfig cfg)
    : cfg_(cfg), m_(VectorXd::Zero(num_params)), v_(VectorXd::Zero(num_params)) {
  if (!(cfg_.lr > 0.0)) fail(ErrorCode::InvalidParams, "learning rate must be positive");
}

void Adam::step(VectorXd& params, const VectorXd& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    fail(ErrorCode::ShapeMismatch, "optimizer holds " + std::to_string(m_.size()) + " moments, got " +
                                       std::to_string(params.size()) + " params and " +
                                       std::to_string(grad.size()) + " grads");
  }
  if (!grad.allFinite()) fail(ErrorCode::NonFiniteGrad, "gradient has non-finite entries");
  double scale = 1.0;
  if (cfg_.clip_norm > 0.0) {
    const double norm = grad.norm();
    if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
  }
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * scale * grad;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * (scale * grad).cwiseAbs2();
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  params.array() -= cfg_.lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + cfg_.eps);
}

const Mlp& Checkpoint::net(const std::string& name) const {
  for (const auto& [n, net] : nets) {
    if (n == name) return net;
  }
  fail(ErrorCode::MissingArtifact, "checkpoint has no network '" + name + "'");
}

const std::vector<double>& Checkpoint::vector(const std::string& name) const {
  for (const auto& [n, v] : vectors) {
    if (n == name) return v;
  }
  fail(ErrorCode::MissingArtifact, "checkpoint has no vector '" + name + "'");
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::string out(kMagic, sizeof kMagic);
  put_u64(out, ckpt.nets.size());
  for (const auto& [name, net] : ckpt.nets) {
    put_name(out, name);
    put_u64(out, net.sizes().size());
    for (int s : net.sizes()) put_u64(out, static_cast<std::uint64_t>(s));
    put_u64(out, static_cast<std::uint64_t>(net.num_params()));
    for (Eigen::Index j = 0; j < net.num_params(); ++j) put_f64(out, net.params()[j]);
  }
  put_u64(out, ckpt.vectors.size());
  for (const auto& [name, v] : ckpt.vectors) {
    put_name(out, name);
    put_u64(out, v.size());
    for (double x : v) put_f64(out, x);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorCode::Io, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(ErrorCode::Io, "write failed: " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::MissingArtifact, "cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(std::move(data), path.string());
  r.magic();
  Checkpoint ckpt;
  const auto nets = r.count();
  for (std::uint64_t k = 0; k < nets; ++k) {
    std::string name = r.name();
    std::vector<int> sizes(static_cast<std::size_t>(r.count()));
    for (auto& s : sizes) {
      const auto v = r.u64();
      if (v == 0 || v > kMaxCount) r.bad("bad layer width in '" + name + "'");
      s = static_cast<int>(v);
    }
    Mlp net;
    try {
      net = Mlp(sizes);
    } catch (const Error& e) {
      r.bad("network '" + name + "': " + e.detail());
    }
    const auto n = r.count();
    if (n != static_cast<std::uint64_t>(net.num_params())) r.bad("parameter count mismatch in '" + name + "'");
    for (Eigen::Index j = 0; j < net.num_params(); ++j) net.params()[j] = r.f64();
    if (!net.params().allFinite()) r.bad("non-finite parameters in '" + name + "'");
    ckpt.nets.emplace_back(std::move(name), std::move(net));
  }
  const auto vecs = r.count();
  for (std::uint64_t k = 0; k < vecs; ++k) {
    std::string name = r.name();
    std::vector<double> v(static_cast<std::size_t>(r.count()));
    for (auto& x : v) x = r.f64();
    ckpt.vectors.emplace_back(std::move(name), std::move(v));
  }
  r.end();
  return ckpt;
}

}  // namespace dflex::nn

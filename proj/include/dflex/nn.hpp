#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace dflex::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Dense network with tanh hidden layers and a linear output layer.
///
/// Parameters live in one flat vector. Layer l stores its weight matrix
/// (out x in, column-major) followed by its bias.
class Mlp {
 public:
  Mlp() = default;
  /// All-zero parameters. `sizes` = {in, hidden..., out}; throws ShapeMismatch
  /// for fewer than two entries or a zero width.
  explicit Mlp(std::vector<int> sizes);

  /// Glorot-uniform weights, zero biases; the last layer is scaled by `out_scale`.
  static Mlp random(std::vector<int> sizes, std::mt19937_64& rng, double out_scale = 1.0);

  [[nodiscard]] const std::vector<int>& sizes() const { return sizes_; }
  [[nodiscard]] int input_size() const { return sizes_.front(); }
  [[nodiscard]] int output_size() const { return sizes_.back(); }
  [[nodiscard]] int num_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  [[nodiscard]] Eigen::Index num_params() const { return params_.size(); }

  VectorXd& params() { return params_; }
  [[nodiscard]] const VectorXd& params() const { return params_; }

  Eigen::Map<MatrixXd> weight(int layer);
  [[nodiscard]] Eigen::Map<const MatrixXd> weight(int layer) const;
  Eigen::Map<VectorXd> bias(int layer);
  [[nodiscard]] Eigen::Map<const VectorXd> bias(int layer) const;

  struct Cache {
    std::vector<MatrixXd> activations;  // input, then each layer's output
  };

  /// Columns are samples. Throws ShapeMismatch.
  [[nodiscard]] MatrixXd forward(const MatrixXd& x) const;
  MatrixXd forward(const MatrixXd& x, Cache& cache) const;
  /// Single-sample forward pass.
  [[nodiscard]] VectorXd predict(const VectorXd& x) const;

  /// Backpropagates dL/d(output) through the cached pass. Adds dL/dθ into
  /// `grad` (resized and zeroed if empty) and returns dL/d(input).
  MatrixXd backward(const Cache& cache, const MatrixXd& upstream, VectorXd& grad) const;

  /// Throws ShapeMismatch when layer sizes differ.
  void copy_params_from(const Mlp& other);
  /// this <- (1 - tau) * this + tau * other.
  void soft_update_from(const Mlp& other, double tau);

 private:
  [[nodiscard]] Eigen::Index weight_offset(int layer) const { return offsets_[static_cast<std::size_t>(layer)]; }

  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  VectorXd params_;
};

/// Gradient of upstream . f(x) with respect to the parameters, for one sample.
VectorXd mlp_gradient(const Mlp& net, const VectorXd& input, const VectorXd& upstream);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 10.0;  // global gradient-norm clip; <= 0 disables
};

/// Adaptive-moment optimizer over one flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index num_params, AdamConfig cfg = {});

  /// Throws NonFiniteGrad or ShapeMismatch; parameters are untouched on error.
  void step(VectorXd& params, const VectorXd& grad);

  [[nodiscard]] long step_count() const { return t_; }
  [[nodiscard]] const VectorXd& first_moment() const { return m_; }
  [[nodiscard]] const VectorXd& second_moment() const { return v_; }
  [[nodiscard]] const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  VectorXd m_;
  VectorXd v_;
  long t_ = 0;
};

/// Named networks plus named vectors (normalization statistics and similar).
///
/// File layout, all integers little-endian u64 and all reals little-endian f64:
///   magic "DFLXNN01"
///   net count; per net: name length, name bytes, layer-size count, sizes, param count, params
///   vector count; per vector: name length, name bytes, length, values
struct Checkpoint {
  std::vector<std::pair<std::string, Mlp>> nets;
  std::vector<std::pair<std::string, std::vector<double>>> vectors;

  /// Throw MissingArtifact when the name is absent.
  [[nodiscard]] const Mlp& net(const std::string& name) const;
  [[nodiscard]] const std::vector<double>& vector(const std::string& name) const;
};

/// Throws Io.
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws MissingArtifact for absent, truncated or malformed files.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace dflex::nn

#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace nnv::model {

/// Raised on malformed problem files or inconsistent layer shapes.
class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
};

/// One dense affine layer x -> W x + b.
struct AffineLayer {
  Eigen::MatrixXd weight;
  Eigen::VectorXd bias;

  int out_dim() const { return static_cast<int>(weight.rows()); }
  int in_dim() const { return static_cast<int>(weight.cols()); }
};

/// Feed-forward network: affine layers with ReLU between consecutive layers
/// (no activation after the last). Immutable after construction.
class Network {
 public:
  Network(std::vector<AffineLayer> layers, int input_dim);

  int input_dim() const { return input_dim_; }
  int output_dim() const { return layers_.back().out_dim(); }
  int num_layers() const { return static_cast<int>(layers_.size()); }
  /// Number of ReLU layers (= num_layers - 1).
  int num_relu_layers() const { return num_layers() - 1; }
  const AffineLayer& layer(int k) const { return layers_.at(k); }
  /// Width of ReLU layer r (0-based), i.e. rows of affine layer r.
  int relu_dim(int r) const { return layers_.at(r).out_dim(); }

 private:
  std::vector<AffineLayer> layers_;
  int input_dim_;
};

/// ℓ∞ ball around a center point.
struct InputBox {
  Eigen::VectorXd center;
  double eps = 0.0;

  Eigen::VectorXd lower() const { return center.array() - eps; }
  Eigen::VectorXd upper() const { return center.array() + eps; }
};

/// Linear output specification: property holds iff coeffs·f(x) + offset >= 0
/// for all x in the box.
struct Spec {
  Eigen::VectorXd coeffs;
  double offset = 0.0;
};

struct Problem {
  Network net;
  InputBox box;
  Spec spec;
};

/// Parses a problem file (JSON, see README for the schema) and validates
/// dimension chaining. Throws ModelError with context on failure.
Problem load_problem(const std::string& path);

/// Folds the specification row into the final affine layer, producing a
/// network with scalar output coeffs·f(x) + offset.
Network canonicalize(const Network& net, const Spec& spec);

/// Concrete forward pass for any network.
Eigen::VectorXd forward_raw(const Network& net, const Eigen::VectorXd& x);

/// Concrete forward pass of a canonical (scalar-output) network.
double forward(const Network& net, const Eigen::VectorXd& x);

}  // namespace nnv::model

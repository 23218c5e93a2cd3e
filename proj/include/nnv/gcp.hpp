#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nnv/bounds.hpp"
#include "nnv/cuts.hpp"
#include "nnv/model.hpp"

namespace nnv::gcp {

class GcpError : public std::runtime_error {
 public:
  explicit GcpError(const std::string& what) : std::runtime_error(what) {}
};

/// Raised by grad_check when a parameter sits too close to a clamp kink or a
/// branch boundary for finite differences to be trustworthy.
class KinkError : public GcpError {
 public:
  explicit KinkError(const std::string& what) : GcpError(what) {}
};

/// Optimizable dual parameters: per-unstable-neuron lower slopes in [0,1] and
/// one multiplier >= 0 per cut.
struct GcpParams {
  bounds::AlphaSet alpha;
  Eigen::VectorXd beta;
};

enum class HBranch { Middle, Zero, Linear };

struct LemmaResult {
  double pi;
  double gamma;
  double h;
  HBranch branch;
};

/// Closed-form maximum of l*pi - ReLU(u*gamma + l*pi + q) subject to
/// pi, gamma >= 0 and pi + gamma = c_cap. Requires u >= 0 >= l, u - l > 0.
LemmaResult lemma_pi_gamma(double u, double l, double c_cap, double q);

struct UnstableTrace {
  double nu_hat;
  double pi;
  double gamma;
  double h;
  double beta_z;  // beta^T Z column for this neuron
  HBranch branch;
};

/// Dual quantities recorded by one backward pass; nu[r] is the multiplier
/// vector of ReLU layer r, the final layer's multiplier is fixed at -1.
struct DualTrace {
  std::vector<Eigen::VectorXd> nu;
  std::vector<std::vector<UnstableTrace>> unstable;  // aligned with status.unstable[r]
  Eigen::VectorXd input_coeffs;                      // linear minorant over the input
  double input_term = 0.0;
};

struct GcpBound {
  double value;
  DualTrace trace;
  GcpParams params;
};

GcpParams default_params(const bounds::PreActBounds& b, const bounds::NeuronStatus& st, int num_cuts);

/// Backward bound propagation through the cut-augmented dual: returns a sound
/// lower bound on the cut LP optimum for any feasible (alpha, beta).
GcpBound propagate(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                   const bounds::NeuronStatus& st, const cuts::CutSet& cs, const GcpParams& params);

struct Gradients {
  bounds::AlphaSet alpha;
  Eigen::VectorXd beta;
};

/// Analytic gradient of the bound w.r.t. (alpha, beta), reverse mode over the
/// recorded trace. Clamp kinks use the derivative of the active branch.
Gradients gradients(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                    const bounds::NeuronStatus& st, const cuts::CutSet& cs, const GcpParams& params,
                    const DualTrace& trace);

struct OptConfig {
  int iterations = 20;
  double lr_alpha = 0.1;
  double lr_beta = 0.02;
  double lr_decay = 0.9;
  uint64_t seed = 0;
};

/// Projected Adam ascent on (alpha, beta); returns the best bound seen,
/// which is never below the starting point's.
GcpBound optimize(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                  const bounds::NeuronStatus& st, const cuts::CutSet& cs, const OptConfig& cfg,
                  const GcpParams* warm_start = nullptr);

/// Max relative error between analytic and central-difference gradients over
/// all coordinates. Throws KinkError when params are not clearly interior.
double grad_check(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                  const bounds::NeuronStatus& st, const cuts::CutSet& cs, const GcpParams& params, double step);

}  // namespace nnv::gcp

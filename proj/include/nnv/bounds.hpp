#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nnv/model.hpp"

namespace nnv::bounds {

enum class NeuronKind { Active, Inactive, Unstable };

/// Sound per-layer pre-activation bounds l <= x^(r) <= u for every input in
/// the box. Indexed by ReLU layer r in [0, num_relu_layers).
struct PreActBounds {
  std::vector<Eigen::VectorXd> lower;
  std::vector<Eigen::VectorXd> upper;

  int num_layers() const { return static_cast<int>(lower.size()); }
};

/// Stability classification of every ReLU neuron.
///
/// Tie rule: l >= 0 is active, u <= 0 is inactive; unstable requires l < 0 < u.
/// A nominally unstable neuron with u - l below the width guard is forced
/// stable by the sign of its midpoint, so relaxation slopes u/(u-l) stay
/// well defined.
struct NeuronStatus {
  std::vector<std::vector<NeuronKind>> kind;   // [r][j]
  std::vector<std::vector<int>> unstable;      // indices of unstable neurons per layer

  int total_unstable() const;
  bool is(int r, int j, NeuronKind k) const { return kind[r][j] == k; }
};

constexpr double kStableWidthGuard = 1e-12;

NeuronStatus classify(const PreActBounds& b);

/// Lower-bounding linear function a·x + c over the input layer.
struct LinearBound {
  Eigen::VectorXd coeffs;
  double offset = 0.0;
};

/// Exact minimum of coeffs·x + offset over the ℓ∞ ball.
double concretize(const LinearBound& lb, const model::InputBox& box);

/// Interval bound propagation through the whole network.
PreActBounds ibp(const model::Network& net, const model::InputBox& box);

/// Lower bound on the scalar network output by pure interval propagation.
double ibp_output_lower(const model::Network& net, const model::InputBox& box);

/// Lower ReLU relaxation slopes, one entry per neuron per ReLU layer; only
/// entries of unstable neurons are read. Values live in [0, 1].
struct AlphaSet {
  std::vector<Eigen::VectorXd> a;

  static AlphaSet zeros_like(const PreActBounds& b);
};

/// Slope heuristic: 1 when u >= -l, else 0 (picks the tighter side).
AlphaSet default_alpha(const PreActBounds& b, const NeuronStatus& st);

struct CrownResult {
  double value;             // sound lower bound on the output over the box
  LinearBound input_bound;  // the final linear minorant over the input
};

/// Backward linear bound propagation for the scalar output of a canonical
/// network, with per-neuron lower slopes alpha and the u/(u-l) upper chord.
CrownResult crown_lower(const model::Network& net, const model::InputBox& box, const PreActBounds& b,
                        const NeuronStatus& st, const AlphaSet& alpha);

enum class BoundMethod { Ibp, Crown };

/// Layer-by-layer intermediate bounds plus classification. The Crown method
/// intersects backward bounds with IBP, so it is never looser elementwise.
std::pair<PreActBounds, NeuronStatus> intermediate_bounds(const model::Network& net, const model::InputBox& box,
                                                          BoundMethod method);

}  // namespace nnv::bounds

#include "nnv/bounds.hpp"

#include <cmath>

namespace nnv::bounds {

int NeuronStatus::total_unstable() const {
  int n = 0;
  for (const auto& layer : unstable) n += static_cast<int>(layer.size());
  return n;
}

NeuronStatus classify(const PreActBounds& b) {
  NeuronStatus st;
  st.kind.resize(b.num_layers());
  st.unstable.resize(b.num_layers());
  for (int r = 0; r < b.num_layers(); ++r) {
    const auto& l = b.lower[r];
    const auto& u = b.upper[r];
    st.kind[r].resize(l.size());
    for (int j = 0; j < l.size(); ++j) {
      if (l(j) >= 0.0) {
        st.kind[r][j] = NeuronKind::Active;
      } else if (u(j) <= 0.0) {
        st.kind[r][j] = NeuronKind::Inactive;
      } else if (u(j) - l(j) < kStableWidthGuard) {
        st.kind[r][j] = (l(j) + u(j) >= 0.0) ? NeuronKind::Active : NeuronKind::Inactive;
      } else {
        st.kind[r][j] = NeuronKind::Unstable;
        st.unstable[r].push_back(j);
      }
    }
  }
  return st;
}

double concretize(const LinearBound& lb, const model::InputBox& box) {
  return lb.coeffs.dot(box.center) - box.eps * lb.coeffs.lpNorm<1>() + lb.offset;
}

PreActBounds ibp(const model::Network& net, const model::InputBox& box) {
  PreActBounds out;
  Eigen::VectorXd lo = box.lower(), hi = box.upper();
  for (int k = 0; k < net.num_layers(); ++k) {
    const Eigen::MatrixXd& w = net.layer(k).weight;
    const Eigen::MatrixXd wp = w.cwiseMax(0.0), wn = w.cwiseMin(0.0);
    Eigen::VectorXd l = wp * lo + wn * hi + net.layer(k).bias;
    Eigen::VectorXd u = wp * hi + wn * lo + net.layer(k).bias;
    if (k + 1 < net.num_layers()) {
      out.lower.push_back(l);
      out.upper.push_back(u);
      lo = l.cwiseMax(0.0);
      hi = u.cwiseMax(0.0);
    } else {
      lo = l;
      hi = u;
    }
  }
  return out;
}

double ibp_output_lower(const model::Network& net, const model::InputBox& box) {
  Eigen::VectorXd lo = box.lower(), hi = box.upper();
  for (int k = 0; k < net.num_layers(); ++k) {
    const Eigen::MatrixXd& w = net.layer(k).weight;
    const Eigen::MatrixXd wp = w.cwiseMax(0.0), wn = w.cwiseMin(0.0);
    Eigen::VectorXd l = wp * lo + wn * hi + net.layer(k).bias;
    Eigen::VectorXd u = wp * hi + wn * lo + net.layer(k).bias;
    if (k + 1 < net.num_layers()) {
      lo = l.cwiseMax(0.0);
      hi = u.cwiseMax(0.0);
    } else {
      return l(0);
    }
  }
  return -std::numeric_limits<double>::infinity();  // unreachable
}

AlphaSet AlphaSet::zeros_like(const PreActBounds& b) {
  AlphaSet s;
  for (const auto& l : b.lower) s.a.push_back(Eigen::VectorXd::Zero(l.size()));
  return s;
}

AlphaSet default_alpha(const PreActBounds& b, const NeuronStatus& st) {
  AlphaSet s = AlphaSet::zeros_like(b);
  for (int r = 0; r < b.num_layers(); ++r)
    for (int j : st.unstable[r]) s.a[r](j) = (b.upper[r](j) >= -b.lower[r](j)) ? 1.0 : 0.0;
  return s;
}

namespace {

// Backward-propagates N linear rows anchored at the pre-activations of affine
// layer `anchor` (M x^(anchor) + off, x^(anchor) 0-based) down to the input
// layer, applying the per-sign ReLU relaxation at every crossed layer.
// Returns the concretized lower bound per row; optionally exposes the input
// coefficients.
Eigen::VectorXd backward_lower(const model::Network& net, const model::InputBox& box, const PreActBounds& b,
                               const NeuronStatus& st, const AlphaSet& alpha, int anchor, Eigen::MatrixXd m,
                               Eigen::VectorXd off, Eigen::MatrixXd* input_coeffs = nullptr) {
  for (int t = anchor; t >= 0; --t) {
    off += m * net.layer(t).bias;
    m = m * net.layer(t).weight;  // rows now over post-activations of layer t-1 (or the input when t == 0)
    if (t == 0) break;
    const int r = t - 1;
    for (int j = 0; j < m.cols(); ++j) {
      switch (st.kind[r][j]) {
        case NeuronKind::Active:
          break;
        case NeuronKind::Inactive:
          m.col(j).setZero();
          break;
        case NeuronKind::Unstable: {
          const double l = b.lower[r](j), u = b.upper[r](j);
          const double slope = u / (u - l);
          for (int n = 0; n < m.rows(); ++n) {
            const double c = m(n, j);
            if (c >= 0.0) {
              m(n, j) = c * alpha.a[r](j);
            } else {
              m(n, j) = c * slope;
              off(n) += c * (-slope * l);
            }
          }
          break;
        }
      }
    }
  }
  if (input_coeffs) *input_coeffs = m;
  Eigen::VectorXd vals(m.rows());
  for (int n = 0; n < m.rows(); ++n)
    vals(n) = m.row(n).dot(box.center) - box.eps * m.row(n).lpNorm<1>() + off(n);
  return vals;
}

}  // namespace

CrownResult crown_lower(const model::Network& net, const model::InputBox& box, const PreActBounds& b,
                        const NeuronStatus& st, const AlphaSet& alpha) {
  const int last = net.num_layers() - 1;
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(1, 1);
  Eigen::VectorXd off = Eigen::VectorXd::Zero(1);
  Eigen::MatrixXd a;
  Eigen::VectorXd vals = backward_lower(net, box, b, st, alpha, last, m, off, &a);
  // The accumulated offset equals value minus the concretized linear part.
  LinearBound lb;
  lb.coeffs = a.row(0).transpose();
  lb.offset = vals(0) - (lb.coeffs.dot(box.center) - box.eps * lb.coeffs.lpNorm<1>());
  return CrownResult{vals(0), lb};
}

std::pair<PreActBounds, NeuronStatus> intermediate_bounds(const model::Network& net, const model::InputBox& box,
                                                          BoundMethod method) {
  PreActBounds base = ibp(net, box);
  if (method == BoundMethod::Ibp) {
    NeuronStatus st = classify(base);
    return {std::move(base), std::move(st)};
  }

  // Crown: bound each layer backwards using the layers already bounded, then
  // intersect with IBP so the result is never looser.
  PreActBounds out;
  NeuronStatus st;
  st.kind.clear();
  st.unstable.clear();
  for (int r = 0; r < net.num_relu_layers(); ++r) {
    const int d = net.relu_dim(r);
    Eigen::VectorXd lo, hi;
    if (r == 0) {
      lo = base.lower[0];  // no ReLU crossed: IBP is exact here
      hi = base.upper[0];
    } else {
      AlphaSet alpha = default_alpha(out, st);
      Eigen::MatrixXd m(2 * d, d);
      m << Eigen::MatrixXd::Identity(d, d), -Eigen::MatrixXd::Identity(d, d);
      Eigen::VectorXd off = Eigen::VectorXd::Zero(2 * d);
      Eigen::VectorXd vals = backward_lower(net, box, out, st, alpha, r, m, off);
      lo = vals.head(d).cwiseMax(base.lower[r]);
      hi = (-vals.tail(d)).cwiseMin(base.upper[r]);
      // Sound bounds can only cross by rounding noise; keep the pair ordered.
      hi = hi.cwiseMax(lo);
    }
    out.lower.push_back(lo);
    out.upper.push_back(hi);
    NeuronStatus next = classify(out);
    st = std::move(next);
  }
  if (out.lower.empty()) {
    out.lower = {};
    out.upper = {};
  }
  NeuronStatus final_st = classify(out);
  return {std::move(out), std::move(final_st)};
}

}  // namespace nnv::bounds

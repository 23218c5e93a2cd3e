#include "nnv/gcp.hpp"

#include <algorithm>
#include <cmath>

namespace nnv::gcp {

namespace {

using SparseCol = std::vector<std::pair<int, double>>;  // (cut index, coefficient)

// Per-neuron sparse views of the stacked cut blocks.
struct CutIndex {
  int n = 0;
  Eigen::VectorXd rhs;
  std::vector<std::vector<SparseCol>> p, ph, z;  // [r][j]

  static CutIndex build(const cuts::CutSet& cs, const model::Network& net, const bounds::NeuronStatus& st) {
    CutIndex idx;
    idx.n = cs.size();
    idx.rhs = cs.rhs();
    const int relus = net.num_relu_layers();
    idx.p.resize(relus);
    idx.ph.resize(relus);
    idx.z.resize(relus);
    for (int r = 0; r < relus; ++r) {
      idx.p[r].resize(net.relu_dim(r));
      idx.ph[r].resize(net.relu_dim(r));
      idx.z[r].resize(net.relu_dim(r));
    }
    for (int k = 0; k < cs.size(); ++k) {
      for (const cuts::CutTerm& t : cs[k].terms) {
        if (t.layer < 0 || t.layer >= relus || t.neuron < 0 || t.neuron >= net.relu_dim(t.layer))
          throw GcpError("cut term out of range: layer " + std::to_string(t.layer) + " neuron " +
                         std::to_string(t.neuron));
        switch (t.kind) {
          case cuts::TermKind::Pre:
            idx.p[t.layer][t.neuron].push_back({k, t.coef});
            break;
          case cuts::TermKind::Post:
            idx.ph[t.layer][t.neuron].push_back({k, t.coef});
            break;
          case cuts::TermKind::Z:
            if (st.kind[t.layer][t.neuron] != bounds::NeuronKind::Unstable)
              throw GcpError("cut has a z term on a stable neuron");
            idx.z[t.layer][t.neuron].push_back({k, t.coef});
            break;
        }
      }
    }
    return idx;
  }
};

double sdot(const SparseCol& col, const Eigen::VectorXd& beta) {
  double s = 0.0;
  for (const auto& [k, c] : col) s += beta(k) * c;
  return s;
}

void saxpy(const SparseCol& col, double scale, Eigen::VectorXd& out) {
  for (const auto& [k, c] : col) out(k) += scale * c;
}

void check_params(const model::Network& net, const bounds::NeuronStatus& st, const cuts::CutSet& cs,
                  const GcpParams& params) {
  if (static_cast<int>(params.alpha.a.size()) != net.num_relu_layers())
    throw GcpError("alpha has wrong number of layers");
  for (int r = 0; r < net.num_relu_layers(); ++r) {
    if (params.alpha.a[r].size() != net.relu_dim(r)) throw GcpError("alpha layer size mismatch");
    for (int j : st.unstable[r]) {
      const double a = params.alpha.a[r](j);
      if (!(a >= 0.0 && a <= 1.0)) throw GcpError("alpha out of [0,1]");
    }
  }
  if (params.beta.size() != cs.size()) throw GcpError("beta length does not match cut count");
  for (int k = 0; k < params.beta.size(); ++k)
    if (!(params.beta(k) >= 0.0)) throw GcpError("beta must be nonnegative");
}

// Local derivatives of one unstable neuron, reconstructed from its recorded
// branch with the active-branch convention at kinks.
struct UnstableDerivs {
  double dpi_dnuhat = 0.0;
  double dpi_dq = 0.0;
  double dh_dnuhat = 0.0;
  double dh_dq = 0.0;
};

UnstableDerivs unstable_derivs(const UnstableTrace& t, double u, double l) {
  UnstableDerivs d;
  const double width = u - l;
  const bool cap_active = t.nu_hat > 0.0;  // the cap [nu_hat]_+ responds to nu_hat
  switch (t.branch) {
    case HBranch::Middle:
      if (cap_active) {
        d.dpi_dnuhat = u / width;
        d.dh_dnuhat = l * u / width;
        d.dpi_dq = 1.0 / width;
        d.dh_dq = l / width;
      }
      break;
    case HBranch::Zero:
      break;  // pi pinned at 0, h constant
    case HBranch::Linear:
      if (cap_active) d.dpi_dnuhat = 1.0;  // pi pinned at the cap
      d.dh_dq = -1.0;
      break;
  }
  return d;
}

double sign0(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

LemmaResult lemma_pi_gamma(double u, double l, double c_cap, double q) {
  if (!(u >= 0.0) || !(l <= 0.0) || !(c_cap >= 0.0)) throw GcpError("lemma_pi_gamma: need u >= 0 >= l, c >= 0");
  if (!(u - l > 0.0)) throw GcpError("lemma_pi_gamma: need u - l > 0");
  LemmaResult res;
  const double pi_raw = (u * c_cap + q) / (u - l);
  res.pi = std::clamp(pi_raw, 0.0, c_cap);
  res.gamma = c_cap - res.pi;
  if (q < -u * c_cap) {
    res.branch = HBranch::Zero;
    res.h = 0.0;
  } else if (q > -l * c_cap) {
    res.branch = HBranch::Linear;
    res.h = -q;
  } else {
    res.branch = HBranch::Middle;
    res.h = l * res.pi;
  }
  return res;
}

GcpParams default_params(const bounds::PreActBounds& b, const bounds::NeuronStatus& st, int num_cuts) {
  GcpParams p;
  p.alpha = bounds::default_alpha(b, st);
  p.beta = Eigen::VectorXd::Zero(num_cuts);
  return p;
}

GcpBound propagate(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                   const bounds::NeuronStatus& st, const cuts::CutSet& cs, const GcpParams& params) {
  check_params(net, st, cs, params);
  const CutIndex idx = CutIndex::build(cs, net, st);
  const int relus = net.num_relu_layers();
  const Eigen::VectorXd& beta = params.beta;

  DualTrace trace;
  trace.nu.resize(relus);
  trace.unstable.resize(relus);

  // Output-layer multiplier is fixed at -1; bias terms accumulate -nu^T b.
  Eigen::VectorXd nu_next = Eigen::VectorXd::Constant(1, -1.0);
  double bias_sum = net.layer(net.num_layers() - 1).bias(0);
  double h_sum = 0.0;

  for (int r = relus - 1; r >= 0; --r) {
    const Eigen::MatrixXd& w_next = net.layer(r + 1).weight;
    const Eigen::VectorXd wnu = w_next.transpose() * nu_next;
    Eigen::VectorXd nu_r(net.relu_dim(r));
    trace.unstable[r].reserve(st.unstable[r].size());
    for (int j = 0; j < net.relu_dim(r); ++j) {
      const double bp = idx.n ? sdot(idx.p[r][j], beta) : 0.0;
      switch (st.kind[r][j]) {
        case bounds::NeuronKind::Active: {
          const double bph = idx.n ? sdot(idx.ph[r][j], beta) : 0.0;
          nu_r(j) = wnu(j) - (bp + bph);
          break;
        }
        case bounds::NeuronKind::Inactive:
          nu_r(j) = -bp;
          break;
        case bounds::NeuronKind::Unstable: {
          const double bph = idx.n ? sdot(idx.ph[r][j], beta) : 0.0;
          const double bz = idx.n ? sdot(idx.z[r][j], beta) : 0.0;
          const double nu_hat = wnu(j) - bph;
          const double cap = std::max(nu_hat, 0.0);
          const LemmaResult lem = lemma_pi_gamma(b.upper[r](j), b.lower[r](j), cap, -bz);
          nu_r(j) = lem.pi + params.alpha.a[r](j) * std::min(nu_hat, 0.0) - bp;
          h_sum += lem.h;
          trace.unstable[r].push_back({nu_hat, lem.pi, lem.gamma, lem.h, bz, lem.branch});
          break;
        }
      }
    }
    bias_sum -= nu_r.dot(net.layer(r).bias);
    trace.nu[r] = nu_r;
    nu_next = std::move(nu_r);
  }

  trace.input_coeffs = -(net.layer(0).weight.transpose() * nu_next);
  trace.input_term =
      trace.input_coeffs.dot(box.center) - box.eps * trace.input_coeffs.lpNorm<1>();

  GcpBound out;
  out.value = trace.input_term + bias_sum + h_sum - (idx.n ? beta.dot(idx.rhs) : 0.0);
  out.trace = std::move(trace);
  out.params = params;
  return out;
}

Gradients gradients(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                    const bounds::NeuronStatus& st, const cuts::CutSet& cs, const GcpParams& params,
                    const DualTrace& trace) {
  check_params(net, st, cs, params);
  const CutIndex idx = CutIndex::build(cs, net, st);
  const int relus = net.num_relu_layers();

  Gradients g;
  g.alpha = bounds::AlphaSet::zeros_like(b);
  g.beta = Eigen::VectorXd::Zero(idx.n);
  if (idx.n) g.beta -= idx.rhs;  // d/dbeta of -beta^T d

  // Adjoints of nu per layer; bias terms contribute everywhere, the input
  // concretization contributes at layer 0 through a = -W^(1)T nu^(1).
  std::vector<Eigen::VectorXd> nubar(relus);
  for (int r = 0; r < relus; ++r) nubar[r] = -net.layer(r).bias;
  if (relus > 0) {
    const Eigen::VectorXd& a = trace.input_coeffs;
    Eigen::VectorXd da(a.size());
    for (int m = 0; m < a.size(); ++m) da(m) = box.center(m) - box.eps * sign0(a(m));
    nubar[0] -= net.layer(0).weight * da;
  }

  // Walk layers in computation-reverse order (nu[r] was computed from
  // nu[r+1]), pushing adjoints upward and collecting parameter gradients.
  for (int r = 0; r < relus; ++r) {
    const Eigen::MatrixXd& w_next = net.layer(r + 1).weight;
    Eigen::VectorXd dwnu = Eigen::VectorXd::Zero(net.relu_dim(r));
    int uidx = 0;
    for (int j = 0; j < net.relu_dim(r); ++j) {
      const double nb = nubar[r](j);
      switch (st.kind[r][j]) {
        case bounds::NeuronKind::Active:
          dwnu(j) = nb;
          if (idx.n) {
            saxpy(idx.p[r][j], -nb, g.beta);
            saxpy(idx.ph[r][j], -nb, g.beta);
          }
          break;
        case bounds::NeuronKind::Inactive:
          if (idx.n) saxpy(idx.p[r][j], -nb, g.beta);
          break;
        case bounds::NeuronKind::Unstable: {
          const UnstableTrace& t = trace.unstable[r][uidx++];
          const double alpha = params.alpha.a[r](j);
          const UnstableDerivs d = unstable_derivs(t, b.upper[r](j), b.lower[r](j));
          const double neg_part = std::min(t.nu_hat, 0.0);
          const double dneg = t.nu_hat < 0.0 ? 1.0 : 0.0;
          // d(goal)/d(nu_hat) through nu_r(j) and through h.
          const double via_nuhat = nb * (d.dpi_dnuhat + alpha * dneg) + d.dh_dnuhat;
          const double via_q = nb * d.dpi_dq + d.dh_dq;
          dwnu(j) = via_nuhat;
          g.alpha.a[r](j) += nb * neg_part;
          if (idx.n) {
            saxpy(idx.p[r][j], -nb, g.beta);
            saxpy(idx.ph[r][j], -via_nuhat, g.beta);
            saxpy(idx.z[r][j], -via_q, g.beta);  // q = -beta^T Z
          }
          break;
        }
      }
    }
    if (r + 1 < relus) nubar[r + 1] += w_next * dwnu;
  }
  return g;
}

GcpBound optimize(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                  const bounds::NeuronStatus& st, const cuts::CutSet& cs, const OptConfig& cfg,
                  const GcpParams* warm_start) {
  GcpParams params = warm_start ? *warm_start : default_params(b, st, cs.size());
  GcpBound cur = propagate(net, box, b, st, cs, params);
  GcpBound best = cur;

  // Adam state, one slot per coordinate; only unstable alpha entries move.
  bounds::AlphaSet m_a = bounds::AlphaSet::zeros_like(b), v_a = bounds::AlphaSet::zeros_like(b);
  Eigen::VectorXd m_b = Eigen::VectorXd::Zero(cs.size()), v_b = Eigen::VectorXd::Zero(cs.size());
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double lr_a = cfg.lr_alpha, lr_b = cfg.lr_beta;

  for (int t = 1; t <= cfg.iterations; ++t) {
    const Gradients grad = gradients(net, box, b, st, cs, params, cur.trace);
    const double bc1 = 1.0 - std::pow(kBeta1, t);
    const double bc2 = 1.0 - std::pow(kBeta2, t);
    for (int r = 0; r < static_cast<int>(params.alpha.a.size()); ++r) {
      for (int j : st.unstable[r]) {
        double& m = m_a.a[r](j);
        double& v = v_a.a[r](j);
        const double gk = grad.alpha.a[r](j);
        m = kBeta1 * m + (1.0 - kBeta1) * gk;
        v = kBeta2 * v + (1.0 - kBeta2) * gk * gk;
        double& x = params.alpha.a[r](j);
        x += lr_a * (m / bc1) / (std::sqrt(v / bc2) + kEps);
        x = std::clamp(x, 0.0, 1.0);
      }
    }
    for (int k = 0; k < params.beta.size(); ++k) {
      const double gk = grad.beta(k);
      m_b(k) = kBeta1 * m_b(k) + (1.0 - kBeta1) * gk;
      v_b(k) = kBeta2 * v_b(k) + (1.0 - kBeta2) * gk * gk;
      params.beta(k) += lr_b * (m_b(k) / bc1) / (std::sqrt(v_b(k) / bc2) + kEps);
      params.beta(k) = std::max(params.beta(k), 0.0);
    }
    cur = propagate(net, box, b, st, cs, params);
    if (cur.value > best.value) best = cur;
    lr_a *= cfg.lr_decay;
    lr_b *= cfg.lr_decay;
  }
  return best;
}

double grad_check(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                  const bounds::NeuronStatus& st, const cuts::CutSet& cs, const GcpParams& params, double step) {
  const double margin = 10.0 * step;
  GcpBound base = propagate(net, box, b, st, cs, params);

  // Reject points near any clamp kink or branch boundary; finite differences
  // straddling a kink measure the wrong thing.
  for (int r = 0; r < static_cast<int>(st.unstable.size()); ++r) {
    int uidx = 0;
    for (int j : st.unstable[r]) {
      const double a = params.alpha.a[r](j);
      if (a < margin || a > 1.0 - margin)
        throw KinkError("alpha(" + std::to_string(r) + "," + std::to_string(j) + ") too close to its clamp");
      const UnstableTrace& t = base.trace.unstable[r][uidx++];
      const double cap = std::max(t.nu_hat, 0.0);
      const double u = b.upper[r](j), l = b.lower[r](j);
      if (std::abs(t.nu_hat) < margin)
        throw KinkError("nu_hat near zero at (" + std::to_string(r) + "," + std::to_string(j) + ")");
      if (std::abs(t.beta_z - l * cap) < margin || std::abs(t.beta_z - u * cap) < margin)
        throw KinkError("pi branch boundary at (" + std::to_string(r) + "," + std::to_string(j) + ")");
    }
  }
  for (int k = 0; k < params.beta.size(); ++k)
    if (params.beta(k) < margin) throw KinkError("beta(" + std::to_string(k) + ") too close to its clamp");
  for (int m = 0; m < base.trace.input_coeffs.size(); ++m) {
    const double a = base.trace.input_coeffs(m);
    if (a != 0.0 && std::abs(a) < margin) throw KinkError("input coefficient " + std::to_string(m) + " near zero");
  }

  const Gradients analytic = gradients(net, box, b, st, cs, params, base.trace);

  double worst = 0.0;
  auto update = [&](double fd, double an) {
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-3});
    worst = std::max(worst, std::abs(fd - an) / denom);
  };

  for (int r = 0; r < static_cast<int>(st.unstable.size()); ++r) {
    for (int j : st.unstable[r]) {
      GcpParams p = params;
      p.alpha.a[r](j) += step;
      const double up = propagate(net, box, b, st, cs, p).value;
      p.alpha.a[r](j) -= 2.0 * step;
      const double dn = propagate(net, box, b, st, cs, p).value;
      update((up - dn) / (2.0 * step), analytic.alpha.a[r](j));
    }
  }
  for (int k = 0; k < params.beta.size(); ++k) {
    GcpParams p = params;
    p.beta(k) += step;
    const double up = propagate(net, box, b, st, cs, p).value;
    p.beta(k) -= 2.0 * step;
    const double dn = propagate(net, box, b, st, cs, p).value;
    update((up - dn) / (2.0 * step), analytic.beta(k));
  }
  return worst;
}

}  // namespace nnv::gcp

#include "nnv/gomory.hpp"

#include <cmath>
#include <map>

namespace nnv::cuts {

namespace {

// Rows are used only when the basic z sits comfortably inside (0,1);
// near-integral rows give numerically vicious cuts.
constexpr double kFracLow = 0.01;
constexpr double kFracHigh = 0.99;
constexpr double kDropTol = 1e-10;
constexpr double kCoefCap = 1e8;
constexpr double kIntSnap = 1e-9;

// Exact rewrite of input variables through layer-1 pre-activations:
// x = x_from_pre * (pre^(1) - b^(1)) whenever W^(1) has full column rank.
struct InputRewrite {
  bool exact = false;
  Eigen::MatrixXd x_from_pre;
  Eigen::VectorXd offset;
};

InputRewrite make_rewrite(const model::Network* net) {
  InputRewrite rw;
  if (!net || net->num_layers() < 2) return rw;
  const Eigen::MatrixXd& w = net->layer(0).weight;
  if (w.rows() < w.cols()) return rw;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(w);
  if (cod.rank() < w.cols()) return rw;
  Eigen::MatrixXd pinv = cod.pseudoInverse();
  if (((pinv * w) - Eigen::MatrixXd::Identity(w.cols(), w.cols())).cwiseAbs().maxCoeff() > 1e-9) return rw;
  rw.exact = true;
  rw.x_from_pre = pinv;
  rw.offset = -pinv * net->layer(0).bias;
  return rw;
}

std::vector<Cut> gmi_round(const lp::LpModel& model, const lp::LpSolution& sol, const InputRewrite& rw) {
  std::vector<Cut> out;
  const auto& cols = sol.std_cols;
  const int ncols = static_cast<int>(cols.size());
  const int rhs_col = static_cast<int>(sol.tableau.cols()) - 1;

  std::vector<bool> is_basic(ncols, false);
  for (int c : sol.basis) is_basic[c] = true;

  for (int r = 0; r < static_cast<int>(sol.tableau.rows()); ++r) {
    const int bcol = sol.basis[r];
    if (cols[bcol].src != lp::StdColumn::Src::Var || !cols[bcol].integral) continue;
    const double val = sol.tableau(r, rhs_col);
    const double f0 = val - std::floor(val);
    if (f0 < kFracLow || f0 > kFracHigh) continue;

    // Gomory mixed-integer cut over the nonbasic standard columns,
    // accumulated directly in structured-variable space through each
    // column's definition: sum(coef_j * w_j) >= f0.
    std::map<int, double> lhs;
    double lhs_const = 0.0;
    bool usable = true;
    for (int j = 0; j < ncols && usable; ++j) {
      if (is_basic[j]) continue;
      double a = sol.tableau(r, j);
      double coef;
      if (cols[j].integral) {
        if (std::abs(a - std::round(a)) < kIntSnap) a = std::round(a);
        const double fj = a - std::floor(a);
        coef = (fj <= f0) ? fj : f0 * (1.0 - fj) / (1.0 - f0);
      } else {
        coef = (a > 0.0) ? a : f0 / (1.0 - f0) * (-a);
      }
      if (coef == 0.0) continue;
      if (!std::isfinite(coef) || std::abs(coef) > kCoefCap) {
        usable = false;
        break;
      }
      lhs_const += coef * cols[j].const0;
      for (const auto& [vc, vcoef] : cols[j].expr) lhs[vc] += coef * vcoef;
    }
    if (!usable) continue;

    // sum(lhs * v) >= f0 - lhs_const, negated into <= form.
    double rhs = lhs_const - f0;
    std::map<std::tuple<int, TermKind, int>, double> terms;
    for (const auto& [vc, raw] : lhs) {
      const double c = -raw;
      if (c == 0.0) continue;
      const lp::VarKey& key = model.key(vc);
      if (key.kind == lp::VarKind::Input) {
        if (rw.exact) {
          for (int m = 0; m < rw.x_from_pre.cols(); ++m) {
            const double cc = c * rw.x_from_pre(key.neuron, m);
            if (cc != 0.0) terms[{0, TermKind::Pre, m}] += cc;
          }
          rhs -= c * rw.offset(key.neuron);
        } else {
          // Fold the input term into the rhs using its box bounds.
          rhs -= std::min(c * model.var_lo(vc), c * model.var_hi(vc));
        }
        continue;
      }
      const TermKind kind = key.kind == lp::VarKind::Pre    ? TermKind::Pre
                            : key.kind == lp::VarKind::Post ? TermKind::Post
                                                            : TermKind::Z;
      terms[{key.layer, kind, key.neuron}] += c;
    }

    Cut cut;
    bool bad = false;
    for (const auto& [tk, c] : terms) {
      if (!std::isfinite(c) || std::abs(c) > kCoefCap) {
        bad = true;
        break;
      }
      const auto [layer, kind, neuron] = tk;
      if (std::abs(c) < kDropTol) {
        // Conservative drop: absorb the worst case of the dropped term.
        const lp::VarKind vk = kind == TermKind::Pre ? lp::VarKind::Pre
                               : kind == TermKind::Post ? lp::VarKind::Post
                                                        : lp::VarKind::Z;
        const int vc = model.column({vk, layer, neuron});
        rhs -= std::min(c * model.var_lo(vc), c * model.var_hi(vc));
        continue;
      }
      cut.terms.push_back({layer, kind, neuron, c});
    }
    if (bad || cut.terms.empty() || !std::isfinite(rhs)) continue;
    cut.rhs = rhs;
    out.push_back(std::move(cut));
  }
  return out;
}

}  // namespace

std::vector<Cut> gomory_generate(const lp::LpModel& model, const lp::LpSolution& solution, int max_rounds) {
  std::vector<Cut> all;
  if (max_rounds <= 0 || solution.status != lp::LpSolution::Status::Optimal) return all;
  const InputRewrite rw = make_rewrite(model.network.get());

  lp::LpModel cur = model;
  lp::LpSolution own;
  const lp::LpSolution* sol = &solution;
  for (int round = 0; round < max_rounds; ++round) {
    std::vector<Cut> cuts = gmi_round(cur, *sol, rw);
    if (cuts.empty()) break;
    all.insert(all.end(), cuts.begin(), cuts.end());
    cur = lp::add_cuts(cur, CutSet(cuts));
    own = lp::simplex_solve(cur);
    if (own.status != lp::LpSolution::Status::Optimal) break;
    sol = &own;
  }
  return all;
}

std::vector<bool> validate_cuts(const model::Network& net, const model::InputBox& box,
                                const bounds::PreActBounds& b, const bounds::NeuronStatus& st,
                                const std::vector<Cut>& cs) {
  const int u = st.total_unstable();
  if (u > lp::kPatternCap)
    throw lp::CapExceededError("cut validation capped at " + std::to_string(lp::kPatternCap) +
                               " unstable neurons, got " + std::to_string(u));

  // Per-layer lookup from neuron index to flattened unstable position.
  std::vector<std::vector<int>> flat_idx(net.num_relu_layers());
  {
    int next = 0;
    for (int r = 0; r < net.num_relu_layers(); ++r) {
      flat_idx[r].assign(net.relu_dim(r), -1);
      for (int j : st.unstable[r]) flat_idx[r][j] = next++;
    }
  }

  std::vector<bool> ok(cs.size(), true);
  for (uint64_t mask = 0; mask < (uint64_t{1} << u); ++mask) {
    std::vector<bool> bits(u);
    for (int i = 0; i < u; ++i) bits[i] = (mask >> i) & 1;
    const lp::PatternMaps maps = lp::pattern_maps(net, st, bits);

    for (size_t k = 0; k < cs.size(); ++k) {
      if (!ok[k]) continue;
      Eigen::RowVectorXd obj_a = Eigen::RowVectorXd::Zero(net.input_dim());
      double obj_c = 0.0;
      for (const CutTerm& t : cs[k].terms) {
        switch (t.kind) {
          case TermKind::Pre:
            obj_a += t.coef * maps.pre_a[t.layer].row(t.neuron);
            obj_c += t.coef * maps.pre_c[t.layer](t.neuron);
            break;
          case TermKind::Post: {
            const bool pass = st.kind[t.layer][t.neuron] == bounds::NeuronKind::Active ||
                              (st.kind[t.layer][t.neuron] == bounds::NeuronKind::Unstable &&
                               bits[flat_idx[t.layer][t.neuron]]);
            if (pass) {
              obj_a += t.coef * maps.pre_a[t.layer].row(t.neuron);
              obj_c += t.coef * maps.pre_c[t.layer](t.neuron);
            }
            break;
          }
          case TermKind::Z: {
            if (st.kind[t.layer][t.neuron] != bounds::NeuronKind::Unstable)
              throw CutError("cut references z of a stable neuron");
            obj_c += t.coef * (bits[flat_idx[t.layer][t.neuron]] ? 1.0 : 0.0);
            break;
          }
        }
      }
      lp::PatternOptimum opt = lp::pattern_extremum(net, box, b, st, bits, maps, obj_a, obj_c, /*maximize=*/true);
      if (opt.feasible && opt.value > cs[k].rhs + 1e-7) ok[k] = false;
    }
  }
  return ok;
}

bool validate_cut(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                  const bounds::NeuronStatus& st, const Cut& cut) {
  return validate_cuts(net, box, b, st, {cut})[0];
}

}  // namespace nnv::cuts

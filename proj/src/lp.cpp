#include "nnv/lp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace nnv::lp {

namespace {
constexpr double kCostTol = 1e-9;
constexpr double kPivotTol = 1e-9;
constexpr double kPhase1Tol = 1e-7;
constexpr double kResidualTol = 1e-7;
}  // namespace

std::string to_string(const VarKey& k) {
  switch (k.kind) {
    case VarKind::Input: return "in_" + std::to_string(k.neuron);
    case VarKind::Pre: return "pre" + std::to_string(k.layer + 1) + "_" + std::to_string(k.neuron);
    case VarKind::Post: return "post" + std::to_string(k.layer + 1) + "_" + std::to_string(k.neuron);
    case VarKind::Z: return "z" + std::to_string(k.layer + 1) + "_" + std::to_string(k.neuron);
  }
  return "?";
}

int LpModel::add_variable(const VarKey& key, double lo, double hi) {
  if (index_.count(key)) throw LpError("variable added twice: " + to_string(key));
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw LpError("variable " + to_string(key) + " needs finite bounds");
  const int col = num_vars();
  index_[key] = col;
  keys_.push_back(key);
  lo_.push_back(lo);
  hi_.push_back(hi);
  return col;
}

int LpModel::column(const VarKey& key) const {
  auto it = index_.find(key);
  if (it == index_.end()) throw UnknownVariableError("unknown variable: " + to_string(key));
  return it->second;
}

bool LpModel::has_variable(const VarKey& key) const { return index_.count(key) > 0; }

void LpModel::add_row(Terms coeffs, RowSense sense, double rhs) {
  for (const auto& [col, c] : coeffs) {
    if (col < 0 || col >= num_vars()) throw LpError("row references column out of range");
    if (!std::isfinite(c)) throw LpError("row has non-finite coefficient");
  }
  rows_.push_back(Row{std::move(coeffs), sense, rhs});
}

void LpModel::set_objective(Terms coeffs, double constant) {
  obj_ = std::move(coeffs);
  obj_const_ = constant;
}

LpModel build_lp(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                 const bounds::NeuronStatus& st, LpForm form) {
  LpModel m;
  m.network = std::make_shared<model::Network>(net);

  for (int j = 0; j < net.input_dim(); ++j)
    m.add_variable({VarKind::Input, -1, j}, box.center(j) - box.eps, box.center(j) + box.eps);

  for (int r = 0; r < net.num_relu_layers(); ++r) {
    for (int j = 0; j < net.relu_dim(r); ++j) {
      const double l = b.lower[r](j), u = b.upper[r](j);
      m.add_variable({VarKind::Pre, r, j}, l, u);
      switch (st.kind[r][j]) {
        case bounds::NeuronKind::Active:
          m.add_variable({VarKind::Post, r, j}, l, u);
          break;
        case bounds::NeuronKind::Inactive:
          m.add_variable({VarKind::Post, r, j}, 0.0, 0.0);
          break;
        case bounds::NeuronKind::Unstable:
          m.add_variable({VarKind::Post, r, j}, 0.0, std::max(u, 0.0));
          if (form == LpForm::ZForm) m.add_variable({VarKind::Z, r, j}, 0.0, 1.0);
          break;
      }
    }
  }

  // Affine chaining: pre^(r) - W^(r) prev = b^(r).
  for (int r = 0; r < net.num_relu_layers(); ++r) {
    const auto& layer = net.layer(r);
    for (int j = 0; j < net.relu_dim(r); ++j) {
      Terms t;
      t.push_back({m.column({VarKind::Pre, r, j}), 1.0});
      for (int i = 0; i < layer.in_dim(); ++i) {
        const double w = layer.weight(j, i);
        if (w == 0.0) continue;
        const VarKey prev = (r == 0) ? VarKey{VarKind::Input, -1, i} : VarKey{VarKind::Post, r - 1, i};
        t.push_back({m.column(prev), -w});
      }
      m.add_row(std::move(t), RowSense::Eq, layer.bias(j));
    }
  }

  // ReLU relaxation rows.
  for (int r = 0; r < net.num_relu_layers(); ++r) {
    for (int j = 0; j < net.relu_dim(r); ++j) {
      const int pre = m.column({VarKind::Pre, r, j});
      const int post = m.column({VarKind::Post, r, j});
      switch (st.kind[r][j]) {
        case bounds::NeuronKind::Active:
          m.add_row({{post, 1.0}, {pre, -1.0}}, RowSense::Eq, 0.0);
          break;
        case bounds::NeuronKind::Inactive:
          break;  // post pinned to 0 by its bounds
        case bounds::NeuronKind::Unstable: {
          const double l = b.lower[r](j), u = b.upper[r](j);
          m.add_row({{pre, 1.0}, {post, -1.0}}, RowSense::Le, 0.0);  // post >= pre
          if (form == LpForm::ZForm) {
            const int z = m.column({VarKind::Z, r, j});
            m.add_row({{post, 1.0}, {z, -u}}, RowSense::Le, 0.0);
            m.add_row({{post, 1.0}, {pre, -1.0}, {z, -l}}, RowSense::Le, -l);
          } else {
            const double s = u / (u - l);
            m.add_row({{post, 1.0}, {pre, -s}}, RowSense::Le, -s * l);
          }
          break;
        }
      }
    }
  }

  // Objective: the final affine layer over the last post-activations.
  const auto& last = net.layer(net.num_layers() - 1);
  Terms obj;
  for (int i = 0; i < last.in_dim(); ++i) {
    const double w = last.weight(0, i);
    if (w == 0.0) continue;
    const VarKey prev = (net.num_layers() == 1) ? VarKey{VarKind::Input, -1, i}
                                                : VarKey{VarKind::Post, net.num_relu_layers() - 1, i};
    obj.push_back({m.column(prev), w});
  }
  m.set_objective(std::move(obj), last.bias(0));
  return m;
}

LpModel add_cuts(const LpModel& m, const cuts::CutSet& cs) {
  LpModel out = m;
  for (const cuts::Cut& c : cs.all()) {
    std::map<int, double> agg;
    for (const cuts::CutTerm& t : c.terms) {
      VarKind kind = t.kind == cuts::TermKind::Pre    ? VarKind::Pre
                     : t.kind == cuts::TermKind::Post ? VarKind::Post
                                                      : VarKind::Z;
      agg[out.column({kind, t.layer, t.neuron})] += t.coef;
    }
    Terms terms(agg.begin(), agg.end());
    out.add_row(std::move(terms), RowSense::Le, c.rhs);
  }
  return out;
}

namespace {

// Dense two-phase tableau simplex. Tableau layout: rows 0..m-1 are the
// constraints, row m is the reduced-cost row; the last column is the rhs.
class Simplex {
 public:
  explicit Simplex(const LpModel& m) : model_(m) {}

  LpSolution run() {
    build_standard_form();
    if (infeasible_bounds_) return LpSolution{};  // empty box => infeasible

    phase1();
    if (!feasible_) return LpSolution{};
    phase2();

    LpSolution sol;
    sol.status = LpSolution::Status::Optimal;
    sol.primal = structured_primal();
    sol.objective = objective_value(sol.primal);
    sol.basis = basis_;
    sol.tableau = tab_.topRows(num_rows_);
    sol.std_cols = cols_;
    check_residuals(sol.primal);
    return sol;
  }

 private:
  void build_standard_form() {
    const int nv = model_.num_vars();
    int n_le = 0;
    for (const Row& r : model_.rows())
      if (r.sense == RowSense::Le) ++n_le;

    num_rows_ = static_cast<int>(model_.rows().size()) + nv;  // model rows + upper-bound rows
    n_real_ = nv + n_le + nv;                                  // w vars, row slacks, ub slacks

    cols_.clear();
    for (int j = 0; j < nv; ++j) {
      const bool integral = model_.key(j).kind == VarKind::Z;
      if (model_.var_hi(j) < model_.var_lo(j) - 1e-12) infeasible_bounds_ = true;
      cols_.push_back({StdColumn::Src::Var, j, integral, -model_.var_lo(j), {{j, 1.0}}});
    }
    for (int r = 0; r < static_cast<int>(model_.rows().size()); ++r) {
      const Row& row = model_.rows()[r];
      if (row.sense != RowSense::Le) continue;
      Terms neg;
      for (const auto& [col, c] : row.coeffs) neg.push_back({col, -c});
      cols_.push_back({StdColumn::Src::RowSlack, r, false, row.rhs, std::move(neg)});
    }
    for (int j = 0; j < nv; ++j) {
      const bool integral = model_.key(j).kind == VarKind::Z;
      cols_.push_back({StdColumn::Src::UbSlack, j, integral, model_.var_hi(j), {{j, -1.0}}});
    }
    if (infeasible_bounds_) return;

    // Assemble [A | b] over shifted variables, slack columns appended.
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(num_rows_, n_real_);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(num_rows_);
    int slack_col = nv;
    for (int r = 0; r < static_cast<int>(model_.rows().size()); ++r) {
      const Row& row = model_.rows()[r];
      double rhs = row.rhs;
      for (const auto& [col, c] : row.coeffs) {
        a(r, col) += c;
        rhs -= c * model_.var_lo(col);
      }
      if (row.sense == RowSense::Le) a(r, slack_col++) = 1.0;
      b(r) = rhs;
    }
    for (int j = 0; j < nv; ++j) {
      const int r = static_cast<int>(model_.rows().size()) + j;
      a(r, j) = 1.0;
      a(r, nv + n_le + j) = 1.0;  // this variable's ub slack
      b(r) = model_.var_hi(j) - model_.var_lo(j);
    }
    for (int r = 0; r < num_rows_; ++r) {
      if (b(r) < 0) {
        a.row(r) = -a.row(r);
        b(r) = -b(r);
      }
    }
    a_ = std::move(a);
    b_ = std::move(b);
  }

  void phase1() {
    const int n_ext = n_real_ + num_rows_;
    tab_.setZero(num_rows_ + 1, n_ext + 1);
    tab_.block(0, 0, num_rows_, n_real_) = a_;
    tab_.block(0, n_real_, num_rows_, num_rows_) = Eigen::MatrixXd::Identity(num_rows_, num_rows_);
    tab_.col(n_ext).head(num_rows_) = b_;

    basis_.resize(num_rows_);
    for (int r = 0; r < num_rows_; ++r) basis_[r] = n_real_ + r;

    // Phase-1 reduced costs: minimize the artificial sum.
    for (int r = 0; r < num_rows_; ++r) tab_.row(num_rows_) -= tab_.row(r);
    for (int r = 0; r < num_rows_; ++r) tab_(num_rows_, basis_[r]) = 0.0;

    iterate(n_ext);

    const double art_sum = -tab_(num_rows_, n_ext);
    if (art_sum > kPhase1Tol) {
      feasible_ = false;
      return;
    }
    feasible_ = true;

    // Drive basic artificials out; rows that cannot pivot are redundant.
    std::vector<int> drop_rows;
    for (int r = 0; r < num_rows_; ++r) {
      if (basis_[r] < n_real_) continue;
      int enter = -1;
      for (int j = 0; j < n_real_; ++j) {
        if (std::abs(tab_(r, j)) > kPivotTol && !in_basis(j)) {
          enter = j;
          break;
        }
      }
      if (enter >= 0)
        pivot(r, enter);
      else
        drop_rows.push_back(r);
    }

    // Rebuild the tableau without artificial columns and redundant rows.
    std::vector<int> keep;
    for (int r = 0; r < num_rows_; ++r)
      if (std::find(drop_rows.begin(), drop_rows.end(), r) == drop_rows.end()) keep.push_back(r);
    Eigen::MatrixXd next(static_cast<int>(keep.size()) + 1, n_real_ + 1);
    std::vector<int> next_basis;
    for (size_t i = 0; i < keep.size(); ++i) {
      next.block(static_cast<int>(i), 0, 1, n_real_) = tab_.block(keep[i], 0, 1, n_real_);
      next(static_cast<int>(i), n_real_) = tab_(keep[i], n_ext);
      next_basis.push_back(basis_[keep[i]]);
    }
    num_rows_ = static_cast<int>(keep.size());
    tab_ = std::move(next);
    basis_ = std::move(next_basis);
    // Clip rounding dust so phase 2 starts from a clean feasible point.
    for (int r = 0; r < num_rows_; ++r)
      if (tab_(r, n_real_) < 0 && tab_(r, n_real_) > -1e-9) tab_(r, n_real_) = 0.0;
  }

  void phase2() {
    // Install the real objective over shifted variables and reduce it.
    tab_.row(num_rows_).setZero();
    for (const auto& [col, c] : model_.objective()) tab_(num_rows_, col) += c;
    for (int r = 0; r < num_rows_; ++r) {
      const double cb = tab_(num_rows_, basis_[r]);
      if (cb != 0.0) tab_.row(num_rows_) -= cb * tab_.row(r);
    }
    for (int r = 0; r < num_rows_; ++r) tab_(num_rows_, basis_[r]) = 0.0;
    iterate(n_real_);
  }

  // Bland's rule: entering = lowest-index column with negative reduced cost,
  // leaving = lowest basic index among ratio-test minimizers.
  void iterate(int n_cols) {
    const int rhs_col = static_cast<int>(tab_.cols()) - 1;
    while (true) {
      int enter = -1;
      for (int j = 0; j < n_cols; ++j) {
        if (!in_basis(j) && tab_(num_rows_, j) < -kCostTol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return;

      int leave = -1;
      double best_ratio = 0.0;
      for (int r = 0; r < num_rows_; ++r) {
        const double piv = tab_(r, enter);
        if (piv <= kPivotTol) continue;
        const double ratio = std::max(tab_(r, rhs_col), 0.0) / piv;
        if (leave < 0 || ratio < best_ratio || (ratio == best_ratio && basis_[r] < basis_[leave])) {
          leave = r;
          best_ratio = ratio;
        }
      }
      if (leave < 0) throw LpError("simplex: unbounded direction in a box-bounded model");
      pivot(leave, enter);
    }
  }

  void pivot(int row, int col) {
    tab_.row(row) /= tab_(row, col);
    for (int r = 0; r <= num_rows_; ++r) {
      if (r == row) continue;
      const double factor = tab_(r, col);
      if (factor != 0.0) tab_.row(r) -= factor * tab_.row(row);
    }
    basis_[row] = col;
  }

  bool in_basis(int col) const { return std::find(basis_.begin(), basis_.end(), col) != basis_.end(); }

  Eigen::VectorXd structured_primal() const {
    const int nv = model_.num_vars();
    Eigen::VectorXd v(nv);
    for (int j = 0; j < nv; ++j) v(j) = model_.var_lo(j);
    const int rhs_col = static_cast<int>(tab_.cols()) - 1;
    for (int r = 0; r < num_rows_; ++r) {
      const int col = basis_[r];
      if (col < nv && cols_[col].src == StdColumn::Src::Var)
        v(cols_[col].index) += std::max(tab_(r, rhs_col), 0.0);
    }
    return v;
  }

  double objective_value(const Eigen::VectorXd& v) const {
    double obj = model_.objective_constant();
    for (const auto& [col, c] : model_.objective()) obj += c * v(col);
    return obj;
  }

  void check_residuals(const Eigen::VectorXd& v) const {
    double worst = 0.0;
    for (const Row& row : model_.rows()) {
      double lhs = 0.0;
      for (const auto& [col, c] : row.coeffs) lhs += c * v(col);
      const double viol = (row.sense == RowSense::Eq) ? std::abs(lhs - row.rhs) : std::max(0.0, lhs - row.rhs);
      worst = std::max(worst, viol);
    }
    for (int j = 0; j < model_.num_vars(); ++j) {
      worst = std::max(worst, model_.var_lo(j) - v(j));
      worst = std::max(worst, v(j) - model_.var_hi(j));
    }
    if (worst > kResidualTol)
      throw LpError("simplex: primal residual " + std::to_string(worst) + " exceeds tolerance");
  }

  const LpModel& model_;
  Eigen::MatrixXd a_, tab_;
  Eigen::VectorXd b_;
  std::vector<StdColumn> cols_;
  std::vector<int> basis_;
  int num_rows_ = 0;
  int n_real_ = 0;
  bool feasible_ = false;
  bool infeasible_bounds_ = false;
};

}  // namespace

LpSolution simplex_solve(const LpModel& m) {
  Simplex s(m);
  return s.run();
}

std::vector<std::pair<int, int>> flatten_unstable(const bounds::NeuronStatus& st) {
  std::vector<std::pair<int, int>> flat;
  for (int r = 0; r < static_cast<int>(st.unstable.size()); ++r)
    for (int j : st.unstable[r]) flat.push_back({r, j});
  return flat;
}

PatternMaps pattern_maps(const model::Network& net, const bounds::NeuronStatus& st, const std::vector<bool>& bits) {
  // Per-layer lookup from neuron to flattened unstable index.
  std::vector<std::vector<int>> flat_idx(net.num_relu_layers());
  int next = 0;
  for (int r = 0; r < net.num_relu_layers(); ++r) {
    flat_idx[r].assign(net.relu_dim(r), -1);
    for (int j : st.unstable[r]) flat_idx[r][j] = next++;
  }
  if (next != static_cast<int>(bits.size())) throw LpError("pattern bit vector has wrong length");

  PatternMaps maps;
  Eigen::MatrixXd cur_a = Eigen::MatrixXd::Identity(net.input_dim(), net.input_dim());
  Eigen::VectorXd cur_c = Eigen::VectorXd::Zero(net.input_dim());
  for (int k = 0; k < net.num_layers(); ++k) {
    Eigen::MatrixXd pre_a = net.layer(k).weight * cur_a;
    Eigen::VectorXd pre_c = net.layer(k).weight * cur_c + net.layer(k).bias;
    if (k == net.num_layers() - 1) {
      maps.out_a = pre_a.row(0);
      maps.out_c = pre_c(0);
      break;
    }
    const int r = k;
    maps.pre_a.push_back(pre_a);
    maps.pre_c.push_back(pre_c);
    for (int j = 0; j < net.relu_dim(r); ++j) {
      const bool pass = st.kind[r][j] == bounds::NeuronKind::Active ||
                        (st.kind[r][j] == bounds::NeuronKind::Unstable && bits[flat_idx[r][j]]);
      if (!pass) {
        pre_a.row(j).setZero();
        pre_c(j) = 0.0;
      }
    }
    cur_a = std::move(pre_a);
    cur_c = std::move(pre_c);
  }
  return maps;
}

namespace {

// LP over the input box with one activation pattern fixed; shared by the
// exact enumerator and cut validation. Minimizes obj_a x + obj_c.
PatternOptimum solve_pattern_lp(const model::Network& net, const model::InputBox& box,
                                const bounds::PreActBounds& b, const bounds::NeuronStatus& st,
                                const std::vector<bool>& bits, const PatternMaps& maps,
                                const Eigen::RowVectorXd& obj_a, double obj_c) {
  LpModel m;
  for (int j = 0; j < net.input_dim(); ++j)
    m.add_variable({VarKind::Input, -1, j}, box.center(j) - box.eps, box.center(j) + box.eps);

  auto dense_row = [&](const Eigen::RowVectorXd& a) {
    Terms t;
    for (int j = 0; j < a.size(); ++j)
      if (a(j) != 0.0) t.push_back({j, a(j)});
    return t;
  };

  int flat = 0;
  for (int r = 0; r < net.num_relu_layers(); ++r) {
    for (int j = 0; j < net.relu_dim(r); ++j) {
      const Eigen::RowVectorXd a = maps.pre_a[r].row(j);
      const double c = maps.pre_c[r](j);
      // Explicit pre-activation box bounds.
      m.add_row(dense_row(a), RowSense::Le, b.upper[r](j) - c);
      m.add_row(dense_row(-a), RowSense::Le, c - b.lower[r](j));
      if (st.kind[r][j] == bounds::NeuronKind::Unstable) {
        const bool on = bits[flat++];
        if (on)
          m.add_row(dense_row(-a), RowSense::Le, c);  // pre >= 0
        else
          m.add_row(dense_row(a), RowSense::Le, -c);  // pre <= 0
      }
    }
  }
  m.set_objective(dense_row(obj_a), obj_c);

  LpSolution sol = simplex_solve(m);
  PatternOptimum out;
  if (sol.status != LpSolution::Status::Optimal) return out;
  out.feasible = true;
  out.value = sol.objective;
  out.x = sol.primal;
  return out;
}

}  // namespace

PatternOptimum pattern_optimum(const model::Network& net, const model::InputBox& box,
                               const bounds::PreActBounds& b, const bounds::NeuronStatus& st,
                               const std::vector<bool>& bits) {
  PatternMaps maps = pattern_maps(net, st, bits);
  return solve_pattern_lp(net, box, b, st, bits, maps, maps.out_a, maps.out_c);
}

PatternOptimum pattern_extremum(const model::Network& net, const model::InputBox& box,
                                const bounds::PreActBounds& b, const bounds::NeuronStatus& st,
                                const std::vector<bool>& bits, const PatternMaps& maps,
                                const Eigen::RowVectorXd& obj_a, double obj_c, bool maximize) {
  PatternOptimum opt = maximize ? solve_pattern_lp(net, box, b, st, bits, maps, -obj_a, -obj_c)
                                : solve_pattern_lp(net, box, b, st, bits, maps, obj_a, obj_c);
  if (opt.feasible && maximize) opt.value = -opt.value;
  return opt;
}

double exact_fstar(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                   const bounds::NeuronStatus& st, Eigen::VectorXd* argmin) {
  const int u = st.total_unstable();
  if (u > kPatternCap)
    throw CapExceededError("exact enumeration capped at " + std::to_string(kPatternCap) + " unstable neurons, got " +
                           std::to_string(u));
  double best = std::numeric_limits<double>::infinity();
  bool any = false;
  for (uint64_t mask = 0; mask < (uint64_t{1} << u); ++mask) {
    std::vector<bool> bits(u);
    for (int i = 0; i < u; ++i) bits[i] = (mask >> i) & 1;
    PatternOptimum opt = pattern_optimum(net, box, b, st, bits);
    if (!opt.feasible) continue;
    any = true;
    if (opt.value < best) {
      best = opt.value;
      if (argmin) *argmin = opt.x;
    }
  }
  if (!any) throw LpError("no activation pattern is feasible: bounds are inconsistent");
  return best;
}

void write_lp_file(const LpModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw LpError("cannot write LP file: " + path);
  out << "\\ objective constant: " << m.objective_constant() << "\n";
  out << "Minimize\n obj:";
  for (const auto& [col, c] : m.objective())
    out << (c >= 0 ? " + " : " - ") << std::abs(c) << " " << to_string(m.key(col));
  out << "\nSubject To\n";
  for (size_t r = 0; r < m.rows().size(); ++r) {
    const Row& row = m.rows()[r];
    out << " r" << r << ":";
    for (const auto& [col, c] : row.coeffs)
      out << (c >= 0 ? " + " : " - ") << std::abs(c) << " " << to_string(m.key(col));
    out << (row.sense == RowSense::Le ? " <= " : " = ") << row.rhs << "\n";
  }
  out << "Bounds\n";
  for (int j = 0; j < m.num_vars(); ++j)
    out << " " << m.var_lo(j) << " <= " << to_string(m.key(j)) << " <= " << m.var_hi(j) << "\n";
  out << "End\n";
}

}  // namespace nnv::lp

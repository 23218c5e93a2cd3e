#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nnv/bounds.hpp"
#include "nnv/cuts.hpp"
#include "nnv/model.hpp"

namespace nnv::lp {

class LpError : public std::runtime_error {
 public:
  explicit LpError(const std::string& what) : std::runtime_error(what) {}
};

/// Thrown when an enumeration would exceed the pattern cap.
class CapExceededError : public LpError {
 public:
  explicit CapExceededError(const std::string& what) : LpError(what) {}
};

class UnknownVariableError : public LpError {
 public:
  explicit UnknownVariableError(const std::string& what) : LpError(what) {}
};

enum class VarKind { Input, Pre, Post, Z };

/// Structured variable name: layer is the 0-based ReLU layer index and is -1
/// for inputs.
struct VarKey {
  VarKind kind;
  int layer;
  int neuron;

  friend bool operator<(const VarKey& a, const VarKey& b) {
    return std::tie(a.kind, a.layer, a.neuron) < std::tie(b.kind, b.layer, b.neuron);
  }
  friend bool operator==(const VarKey& a, const VarKey& b) = default;
};

std::string to_string(const VarKey& k);

enum class RowSense { Le, Eq };

using Terms = std::vector<std::pair<int, double>>;  // (column, coefficient)

struct Row {
  Terms coeffs;
  RowSense sense;
  double rhs;
};

/// A box-bounded linear program over the structured variable catalog.
/// Objective sense is always minimize.
class LpModel {
 public:
  int add_variable(const VarKey& key, double lo, double hi);
  int column(const VarKey& key) const;  // throws UnknownVariableError
  bool has_variable(const VarKey& key) const;
  const VarKey& key(int col) const { return keys_.at(col); }
  int num_vars() const { return static_cast<int>(keys_.size()); }

  void add_row(Terms coeffs, RowSense sense, double rhs);
  void set_objective(Terms coeffs, double constant);

  const std::vector<Row>& rows() const { return rows_; }
  const Terms& objective() const { return obj_; }
  double objective_constant() const { return obj_const_; }
  double var_lo(int col) const { return lo_.at(col); }
  double var_hi(int col) const { return hi_.at(col); }

  /// Network the model was built from; set by build_lp, used by the cut
  /// generator to rewrite input terms through layer-1 pre-activations.
  std::shared_ptr<const model::Network> network;

 private:
  std::vector<VarKey> keys_;
  std::vector<double> lo_, hi_;
  std::vector<Row> rows_;
  Terms obj_;
  double obj_const_ = 0.0;
  std::map<VarKey, int> index_;
};

/// Internal standard-form column bookkeeping, kept on solutions so cut
/// generation can reconstruct tableau rows in structured-variable space.
struct StdColumn {
  enum class Src { Var, RowSlack, UbSlack };
  Src src;
  int index;      // structured column / model row / structured column
  bool integral;  // true for z columns and their upper-bound slacks
  // Definition of the column variable over original structured variables:
  // value = const0 + sum(coef * v_col).
  double const0;
  Terms expr;
};

struct LpSolution {
  enum class Status { Optimal, Infeasible };
  Status status = Status::Infeasible;
  double objective = 0.0;
  Eigen::VectorXd primal;  // structured variables by column

  // Final simplex state (optimal solutions only): basis[r] is the standard
  // column basic in tableau row r; tableau is [B^-1 A | B^-1 b].
  std::vector<int> basis;
  Eigen::MatrixXd tableau;
  std::vector<StdColumn> std_cols;
};

enum class LpForm { ZForm, Planet };

/// Builds the relaxation LP: ZForm keeps relaxed integer variables z in [0,1]
/// with the four unstable-neuron rows; Planet projects z out into the single
/// chord constraint. Both carry explicit pre-activation box bounds.
LpModel build_lp(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                 const bounds::NeuronStatus& st, LpForm form);

/// Returns a copy of the model with the cut rows appended.
LpModel add_cuts(const LpModel& m, const cuts::CutSet& cs);

/// Dense two-phase tableau simplex with Bland's rule. Deterministic; the
/// model must be box-bounded.
LpSolution simplex_solve(const LpModel& m);

/// Affine maps from the input to every pre-activation (and the output) under
/// a fixed activation pattern: unstable neuron k (in flattened layer-major
/// order) passes its pre-activation through iff bits[k] is true.
struct PatternMaps {
  std::vector<Eigen::MatrixXd> pre_a;
  std::vector<Eigen::VectorXd> pre_c;
  Eigen::RowVectorXd out_a;
  double out_c;
};

std::vector<std::pair<int, int>> flatten_unstable(const bounds::NeuronStatus& st);

PatternMaps pattern_maps(const model::Network& net, const bounds::NeuronStatus& st,
                         const std::vector<bool>& bits);

struct PatternOptimum {
  bool feasible = false;
  double value = 0.0;
  Eigen::VectorXd x;  // input-space minimizer when feasible
};

/// Exact minimum of the network output over the box restricted to one
/// activation pattern (signs enforced as LP rows, ReLUs linearized).
PatternOptimum pattern_optimum(const model::Network& net, const model::InputBox& box,
                               const bounds::PreActBounds& b, const bounds::NeuronStatus& st,
                               const std::vector<bool>& bits);

/// Extremum of an arbitrary affine objective over one pattern polytope.
PatternOptimum pattern_extremum(const model::Network& net, const model::InputBox& box,
                                const bounds::PreActBounds& b, const bounds::NeuronStatus& st,
                                const std::vector<bool>& bits, const PatternMaps& maps,
                                const Eigen::RowVectorXd& obj_a, double obj_c, bool maximize);

constexpr int kPatternCap = 20;

/// Exact f* by enumerating all activation patterns of unstable neurons.
/// Throws CapExceededError when more than kPatternCap neurons are unstable.
double exact_fstar(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                   const bounds::NeuronStatus& st, Eigen::VectorXd* argmin = nullptr);

/// Writes the model in LP text format for eyeballing against external tools.
void write_lp_file(const LpModel& m, const std::string& path);

}  // namespace nnv::lp

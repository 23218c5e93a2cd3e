#pragma once

#include <vector>

#include "nnv/cuts.hpp"
#include "nnv/lp.hpp"

namespace nnv::cuts {

/// Gomory mixed-integer cuts derived from optimal tableau rows whose basic
/// variable is a fractional z. Runs up to max_rounds rounds of cut-and-resolve
/// against a copy of the model and returns every cut emitted. Cuts are
/// re-expressed over pre/post/z variables; input-variable terms are rewritten
/// exactly through layer-1 pre-activations when the first weight matrix has
/// full column rank, and otherwise folded into the right-hand side using the
/// variable bounds (weaker but still valid).
std::vector<Cut> gomory_generate(const lp::LpModel& model, const lp::LpSolution& solution, int max_rounds);

/// Exhaustive validity check: true iff for every binary assignment of the
/// unstable z variables, the maximum of the cut's left-hand side over that
/// pattern's polytope stays within rhs + 1e-7.
bool validate_cut(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                  const bounds::NeuronStatus& st, const Cut& cut);

/// Batch form sharing the per-pattern affine maps across all cuts.
std::vector<bool> validate_cuts(const model::Network& net, const model::InputBox& box,
                                const bounds::PreActBounds& b, const bounds::NeuronStatus& st,
                                const std::vector<Cut>& cs);

}  // namespace nnv::cuts

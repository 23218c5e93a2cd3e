#pragma once

#include <cstdint>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nnv/model.hpp"

namespace nnv::cuts {

class CutError : public std::runtime_error {
 public:
  explicit CutError(const std::string& what) : std::runtime_error(what) {}
};

enum class TermKind { Pre, Post, Z };

/// One sparse coefficient of a cutting plane. `layer` is the 0-based ReLU
/// layer index (the on-disk format is 1-based, matching x^(i) numbering).
struct CutTerm {
  int layer;
  TermKind kind;
  int neuron;
  double coef;

  friend bool operator==(const CutTerm&, const CutTerm&) = default;
};

/// A single constraint sum(terms) <= rhs over pre-activation, post-activation
/// and relaxed integer variables of any layers.
struct Cut {
  std::vector<CutTerm> terms;
  double rhs = 0.0;

  friend bool operator==(const Cut&, const Cut&) = default;
};

/// An ordered collection of cuts; row k of the dense blocks reproduces cut k.
class CutSet {
 public:
  CutSet() = default;
  explicit CutSet(std::vector<Cut> cuts) : cuts_(std::move(cuts)) {}

  void append(Cut c) { cuts_.push_back(std::move(c)); }
  void append(const CutSet& other) { cuts_.insert(cuts_.end(), other.cuts_.begin(), other.cuts_.end()); }
  int size() const { return static_cast<int>(cuts_.size()); }
  bool empty() const { return cuts_.empty(); }
  const Cut& operator[](int k) const { return cuts_.at(k); }
  const std::vector<Cut>& all() const { return cuts_; }

  /// Dense N x d coefficient block of one layer/kind (paper-style view).
  Eigen::MatrixXd dense_block(int layer, TermKind kind, int layer_dim) const;
  Eigen::VectorXd rhs() const;

  friend bool operator==(const CutSet&, const CutSet&) = default;

 private:
  std::vector<Cut> cuts_;
};

/// Neuron split decision: positive means branch x^(layer)_neuron >= 0.
struct Split {
  int layer;
  int neuron;
  bool positive;

  friend bool operator==(const Split&, const Split&) = default;
};

/// Encodes splits as single-coefficient cuts on pre-activations:
/// x >= 0 becomes -x <= 0 and x <= 0 becomes +x <= 0.
CutSet splits_to_cuts(const std::vector<Split>& splits);

/// Append-only cut pool shared between the cut generator and the search.
/// One appender and any number of snapshot readers may run concurrently; a
/// snapshot at version v is the immutable prefix of the first v cuts.
class CutPool {
 public:
  int64_t append(const CutSet& cs);
  std::pair<int64_t, CutSet> snapshot() const;
  int64_t version() const;

 private:
  mutable std::mutex mu_;
  std::vector<Cut> cuts_;
};

CutSet read_cuts(const std::string& path, const model::Network& net);
void write_cuts(const std::string& path, const CutSet& cs);

}  // namespace nnv::cuts

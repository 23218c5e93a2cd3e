#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "nnv/bounds.hpp"
#include "nnv/cuts.hpp"
#include "nnv/gcp.hpp"
#include "nnv/model.hpp"

namespace nnv::bab {

/// One search node: the set of neuron sign splits plus the warm-start state
/// of its last bounding. beta is laid out as [one per split | pool prefix at
/// cut_version].
struct Domain {
  std::vector<cuts::Split> splits;
  double lower_bound = -std::numeric_limits<double>::infinity();
  gcp::GcpParams warm;
  int64_t cut_version = 0;
  Eigen::VectorXd input_coeffs;  // linear minorant over the input from the last bounding
};

enum class Verdict { Verified, Falsified, Unknown };

struct Stats {
  int64_t domains_explored = 0;
  int64_t cuts_in_pool = 0;
  std::vector<int64_t> cuts_fetched;  // pool version seen at each batch
  double seconds = 0.0;
};

struct VerificationResult {
  Verdict verdict = Verdict::Unknown;
  double bound = -std::numeric_limits<double>::infinity();
  std::optional<Eigen::VectorXd> counterexample;
  double counterexample_value = 0.0;
  Stats stats;
};

enum class CutWait { None, FirstRound, All };

struct BabConfig {
  int batch_size = 8;
  double timeout_s = 60.0;
  int64_t max_domains = 100000;
  bool easiest_first = true;
  gcp::OptConfig opt;
  int gomory_rounds = 4;
  CutWait cut_wait = CutWait::All;
  uint64_t seed = 0;
};

/// Priority queue over domains. Easiest-first pops the largest lower bounds
/// first; insertion order breaks ties, so traces are reproducible.
class DomainQueue {
 public:
  explicit DomainQueue(bool easiest_first) : easiest_first_(easiest_first) {}

  void push(Domain d);
  std::vector<Domain> pop_batch(int n);
  bool empty() const { return entries_.empty(); }
  int64_t size() const { return static_cast<int64_t>(entries_.size()); }
  double min_bound() const;

 private:
  struct Entry {
    double bound;
    int64_t seq;
    // Ordered so that *begin() is the next domain to pop.
    bool operator<(const Entry& o) const {
      if (bound != o.bound) return bound > o.bound;
      return seq < o.seq;
    }
  };
  bool easiest_first_;
  int64_t next_seq_ = 0;
  std::multiset<Entry> order_;
  std::map<int64_t, Domain> entries_;
};

/// BaBSR-flavored score: pick the unsplit unstable neuron maximizing
/// min(u, -l) * ||W^(next)_{:,j}||_1. Deterministic, ties to lowest index.
std::pair<int, int> select_branch(const model::Network& net, const bounds::PreActBounds& b,
                                  const bounds::NeuronStatus& st, const Domain& dom);

/// Rebounds a domain against a pool snapshot: optimizes (alpha, beta) over
/// splits_to_cuts(splits) followed by the snapshot cuts, warm-started from
/// the domain's stored parameters. The recorded bound never decreases.
Domain bound_domain(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                    const bounds::NeuronStatus& st, Domain dom, int64_t pool_version,
                    const cuts::CutSet& pool_cuts, const gcp::OptConfig& opt);

Domain bound_domain(const model::Network& net, const model::InputBox& box, const bounds::PreActBounds& b,
                    const bounds::NeuronStatus& st, Domain dom, const cuts::CutPool& pool,
                    const gcp::OptConfig& opt);

/// Complete verification by branch and bound. An optional preloaded pool
/// supplies externally generated cuts (read from a file, for instance).
VerificationResult verify(const model::Network& net, const model::InputBox& box, const BabConfig& cfg,
                          const cuts::CutPool* preloaded = nullptr);

/// Same search with a concurrent Gomory generator feeding the pool from the
/// root relaxation. Generator failures degrade to plain verify.
VerificationResult run_with_cut_generator(const model::Network& net, const model::InputBox& box,
                                          const BabConfig& cfg);

}  // namespace nnv::bab

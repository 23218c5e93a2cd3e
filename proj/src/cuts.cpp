#include "nnv/cuts.hpp"

#include <cassert>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

namespace nnv::cuts {

Eigen::MatrixXd CutSet::dense_block(int layer, TermKind kind, int layer_dim) const {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(size(), layer_dim);
  for (int k = 0; k < size(); ++k)
    for (const CutTerm& t : cuts_[k].terms)
      if (t.layer == layer && t.kind == kind) m(k, t.neuron) += t.coef;
  return m;
}

Eigen::VectorXd CutSet::rhs() const {
  Eigen::VectorXd d(size());
  for (int k = 0; k < size(); ++k) d(k) = cuts_[k].rhs;
  return d;
}

CutSet splits_to_cuts(const std::vector<Split>& splits) {
  std::set<std::pair<int, int>> seen;
  CutSet cs;
  for (const Split& s : splits) {
    if (!seen.insert({s.layer, s.neuron}).second)
      throw CutError("duplicate split on neuron (" + std::to_string(s.layer) + "," + std::to_string(s.neuron) + ")");
    Cut c;
    c.terms.push_back({s.layer, TermKind::Pre, s.neuron, s.positive ? -1.0 : 1.0});
    c.rhs = 0.0;
    cs.append(std::move(c));
  }
  return cs;
}

int64_t CutPool::append(const CutSet& cs) {
  std::lock_guard<std::mutex> lock(mu_);
#ifndef NDEBUG
  for (const Cut& c : cs.all()) {
    assert(!c.terms.empty());
    assert(std::isfinite(c.rhs));
  }
#endif
  cuts_.insert(cuts_.end(), cs.all().begin(), cs.all().end());
  return static_cast<int64_t>(cuts_.size());
}

std::pair<int64_t, CutSet> CutPool::snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return {static_cast<int64_t>(cuts_.size()), CutSet(cuts_)};
}

int64_t CutPool::version() const {
  std::lock_guard<std::mutex> lock(mu_);
  return static_cast<int64_t>(cuts_.size());
}

namespace {

const char* kind_name(TermKind k) {
  switch (k) {
    case TermKind::Pre: return "pre";
    case TermKind::Post: return "post";
    case TermKind::Z: return "z";
  }
  return "?";
}

TermKind kind_from(const std::string& s, int entry) {
  if (s == "pre") return TermKind::Pre;
  if (s == "post") return TermKind::Post;
  if (s == "z") return TermKind::Z;
  throw CutError("cut entry " + std::to_string(entry) + ": unknown kind \"" + s + "\"");
}

}  // namespace

CutSet read_cuts(const std::string& path, const model::Network& net) {
  std::ifstream in(path);
  if (!in) throw CutError("cannot open cut file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw CutError("cut file " + path + ": " + e.what());
  }
  if (!j.is_array()) throw CutError("cut file " + path + ": expected a top-level array");

  CutSet cs;
  for (size_t k = 0; k < j.size(); ++k) {
    const auto& jc = j[k];
    Cut c;
    if (!jc.contains("terms") || !jc["terms"].is_array() || jc["terms"].empty())
      throw CutError("cut entry " + std::to_string(k) + ": needs a non-empty \"terms\" array");
    for (const auto& jt : jc["terms"]) {
      CutTerm t;
      // File layers are 1-based paper indices x^(i); internal are 0-based.
      const int file_layer = jt.at("layer").get<int>();
      if (file_layer < 1 || file_layer > net.num_relu_layers())
        throw CutError("cut entry " + std::to_string(k) + ": layer " + std::to_string(file_layer) +
                       " out of range [1," + std::to_string(net.num_relu_layers()) + "]");
      t.layer = file_layer - 1;
      t.kind = kind_from(jt.at("kind").get<std::string>(), static_cast<int>(k));
      t.neuron = jt.at("neuron").get<int>();
      if (t.neuron < 0 || t.neuron >= net.relu_dim(t.layer))
        throw CutError("cut entry " + std::to_string(k) + ": neuron " + std::to_string(t.neuron) +
                       " out of range for layer " + std::to_string(file_layer));
      t.coef = jt.at("coef").get<double>();
      if (!std::isfinite(t.coef)) throw CutError("cut entry " + std::to_string(k) + ": non-finite coefficient");
      c.terms.push_back(t);
    }
    c.rhs = jc.at("rhs").get<double>();
    if (!std::isfinite(c.rhs)) throw CutError("cut entry " + std::to_string(k) + ": non-finite rhs");
    cs.append(std::move(c));
  }
  return cs;
}

void write_cuts(const std::string& path, const CutSet& cs) {
  nlohmann::json j = nlohmann::json::array();
  for (const Cut& c : cs.all()) {
    nlohmann::json jc;
    jc["terms"] = nlohmann::json::array();
    for (const CutTerm& t : c.terms)
      jc["terms"].push_back({{"layer", t.layer + 1}, {"kind", kind_name(t.kind)}, {"neuron", t.neuron}, {"coef", t.coef}});
    jc["rhs"] = c.rhs;
    j.push_back(std::move(jc));
  }
  std::ofstream out(path);
  if (!out) throw CutError("cannot write cut file: " + path);
  out << j.dump(2) << "\n";
}

}  // namespace nnv::cuts

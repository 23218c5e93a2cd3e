#include "nnv/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace nnv::model {

namespace {

void check_finite(const Eigen::MatrixXd& m, const std::string& what) {
  if (!m.allFinite()) throw ModelError(what + " contains a non-finite entry");
}

Eigen::VectorXd parse_vector(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array()) throw ModelError(what + ": expected an array");
  Eigen::VectorXd v(j.size());
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ModelError(what + ": entry " + std::to_string(i) + " is not a number");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

Eigen::MatrixXd parse_matrix(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ModelError(what + ": expected a non-empty array of rows");
  const size_t cols = j[0].is_array() ? j[0].size() : 0;
  if (cols == 0) throw ModelError(what + ": rows must be non-empty arrays");
  Eigen::MatrixXd m(j.size(), cols);
  for (size_t r = 0; r < j.size(); ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw ModelError(what + ": row " + std::to_string(r) + " has inconsistent length");
    for (size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number())
        throw ModelError(what + ": entry (" + std::to_string(r) + "," + std::to_string(c) + ") is not a number");
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

}  // namespace

Network::Network(std::vector<AffineLayer> layers, int input_dim)
    : layers_(std::move(layers)), input_dim_(input_dim) {
  if (layers_.empty()) throw ModelError("network needs at least one layer");
  if (input_dim_ <= 0) throw ModelError("input dimension must be positive");
  int prev = input_dim_;
  for (size_t k = 0; k < layers_.size(); ++k) {
    const AffineLayer& l = layers_[k];
    if (l.weight.rows() != l.bias.size())
      throw ModelError("layer " + std::to_string(k) + ": weight has " + std::to_string(l.weight.rows()) +
                       " rows but bias has length " + std::to_string(l.bias.size()));
    if (l.in_dim() != prev)
      throw ModelError("layer " + std::to_string(k) + ": expects input of size " + std::to_string(prev) +
                       " but weight has " + std::to_string(l.in_dim()) + " columns");
    check_finite(l.weight, "layer " + std::to_string(k) + " weight");
    check_finite(l.bias, "layer " + std::to_string(k) + " bias");
    prev = l.out_dim();
  }
}

Problem load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open problem file: " + path);

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    // parse_error carries the byte offset; recover the line number for context.
    std::ifstream again(path);
    std::string text((std::istreambuf_iterator<char>(again)), std::istreambuf_iterator<char>());
    size_t line = 1;
    for (size_t i = 0; i < std::min(e.byte, text.size()); ++i)
      if (text[i] == '\n') ++line;
    throw ModelError("parse error in " + path + " near line " + std::to_string(line) + ": " + e.what());
  }

  if (!j.contains("layers") || !j["layers"].is_array() || j["layers"].empty())
    throw ModelError(path + ": missing non-empty \"layers\" array");
  std::vector<AffineLayer> layers;
  for (size_t k = 0; k < j["layers"].size(); ++k) {
    const auto& jl = j["layers"][k];
    const std::string ctx = "layer " + std::to_string(k);
    if (!jl.contains("weight") || !jl.contains("bias")) throw ModelError(ctx + ": needs \"weight\" and \"bias\"");
    layers.push_back({parse_matrix(jl["weight"], ctx + " weight"), parse_vector(jl["bias"], ctx + " bias")});
  }

  if (!j.contains("input")) throw ModelError(path + ": missing \"input\"");
  InputBox box;
  box.center = parse_vector(j["input"].at("center"), "input center");
  if (!j["input"].contains("eps") || !j["input"]["eps"].is_number())
    throw ModelError("input: missing numeric \"eps\"");
  box.eps = j["input"]["eps"].get<double>();
  if (box.eps < 0 || !std::isfinite(box.eps)) throw ModelError("input: eps must be finite and >= 0");
  check_finite(box.center, "input center");

  if (!j.contains("spec")) throw ModelError(path + ": missing \"spec\"");
  Spec spec;
  spec.coeffs = parse_vector(j["spec"].at("coeffs"), "spec coeffs");
  spec.offset = j["spec"].value("offset", 0.0);
  if (spec.coeffs.lpNorm<Eigen::Infinity>() == 0.0) throw ModelError("spec: coeffs are all zero");

  Network net(std::move(layers), static_cast<int>(box.center.size()));
  if (spec.coeffs.size() != net.output_dim())
    throw ModelError("spec coeffs length " + std::to_string(spec.coeffs.size()) +
                     " does not match network output dimension " + std::to_string(net.output_dim()));
  return Problem{std::move(net), std::move(box), std::move(spec)};
}

Network canonicalize(const Network& net, const Spec& spec) {
  if (spec.coeffs.size() != net.output_dim())
    throw ModelError("spec coeffs length " + std::to_string(spec.coeffs.size()) +
                     " does not match network output dimension " + std::to_string(net.output_dim()));
  std::vector<AffineLayer> layers;
  layers.reserve(net.num_layers());
  for (int k = 0; k + 1 < net.num_layers(); ++k) layers.push_back(net.layer(k));
  const AffineLayer& last = net.layer(net.num_layers() - 1);
  AffineLayer merged;
  merged.weight = spec.coeffs.transpose() * last.weight;
  merged.bias = Eigen::VectorXd::Constant(1, spec.coeffs.dot(last.bias) + spec.offset);
  layers.push_back(std::move(merged));
  return Network(std::move(layers), net.input_dim());
}

Eigen::VectorXd forward_raw(const Network& net, const Eigen::VectorXd& x) {
  if (x.size() != net.input_dim())
    throw ModelError("forward: input has length " + std::to_string(x.size()) + ", expected " +
                     std::to_string(net.input_dim()));
  Eigen::VectorXd h = x;
  for (int k = 0; k < net.num_layers(); ++k) {
    h = net.layer(k).weight * h + net.layer(k).bias;
    if (k + 1 < net.num_layers()) h = h.cwiseMax(0.0);
  }
  return h;
}

double forward(const Network& net, const Eigen::VectorXd& x) {
  if (net.output_dim() != 1) throw ModelError("forward: network is not canonical (output dim != 1)");
  return forward_raw(net, x)(0);
}

}  // namespace nnv::model

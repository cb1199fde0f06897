#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "meanflowq/counterexample.hpp"
#include "meanflowq/errors.hpp"
#include "meanflowq/mdp.hpp"

namespace meanflowq {

/// JSON model document: {"n_states", "n_actions", "gamma", "P": one row-major
/// matrix per action, "c": row-major, optional "c_diamond"}.
struct ModelFile {
  FiniteMdp mdp;
  CostMatrix c;
  std::optional<CostMatrix> c_diamond;
};

namespace detail {

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, int rows, int cols,
                                        const std::string& name) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows)
    throw ModelError("field '" + name + "' must be an array of " + std::to_string(rows) + " rows");
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<int>(row.size()) != cols)
      throw ModelError("row " + std::to_string(r) + " of '" + name + "' must have " +
                       std::to_string(cols) + " entries");
    for (int c = 0; c < cols; ++c) {
      const auto& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) throw ModelError("non-numeric entry in '" + name + "'");
      m(r, c) = v.get<double>();
    }
  }
  return m;
}

}  // namespace detail

/// Row-major nested-array JSON form of a matrix.
inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline ModelFile model_from_json(const nlohmann::json& j) {
  for (const char* key : {"n_states", "n_actions", "gamma", "P", "c"})
    if (!j.contains(key)) throw ModelError(std::string("model file is missing '") + key + "'");
  ModelFile mf;
  if (!j["n_states"].is_number_integer() || !j["n_actions"].is_number_integer())
    throw ModelError("state and action counts must be integers");
  mf.mdp.n_states = j["n_states"].get<int>();
  mf.mdp.n_actions = j["n_actions"].get<int>();
  if (!j["gamma"].is_number()) throw ModelError("gamma must be a number");
  mf.mdp.discount = j["gamma"].get<double>();
  if (mf.mdp.n_states < 1 || mf.mdp.n_actions < 1)
    throw ModelError("state and action counts must be positive");
  const auto& P = j["P"];
  if (!P.is_array() || static_cast<int>(P.size()) != mf.mdp.n_actions)
    throw ModelError("'P' must hold one matrix per action");
  for (int u = 0; u < mf.mdp.n_actions; ++u)
    mf.mdp.transitions.push_back(detail::matrix_from_json(
        P[static_cast<std::size_t>(u)], mf.mdp.n_states, mf.mdp.n_states, "P[" + std::to_string(u) + "]"));
  mf.mdp.validate();
  mf.c = detail::matrix_from_json(j["c"], mf.mdp.n_states, mf.mdp.n_actions, "c");
  if (j.contains("c_diamond"))
    mf.c_diamond =
        detail::matrix_from_json(j["c_diamond"], mf.mdp.n_states, mf.mdp.n_actions, "c_diamond");
  return mf;
}

inline ModelFile load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ModelError("model file is not valid JSON: " + std::string(e.what()));
  }
  return model_from_json(j);
}

inline nlohmann::json model_to_json(const FiniteMdp& mdp, const CostMatrix& c,
                                    const std::optional<CostMatrix>& c_diamond = std::nullopt) {
  nlohmann::json j;
  j["n_states"] = mdp.n_states;
  j["n_actions"] = mdp.n_actions;
  j["gamma"] = mdp.discount;
  nlohmann::json P = nlohmann::json::array();
  for (int u = 0; u < mdp.n_actions; ++u) P.push_back(matrix_to_json(mdp.P(u)));
  j["P"] = std::move(P);
  j["c"] = matrix_to_json(c);
  if (c_diamond) j["c_diamond"] = matrix_to_json(*c_diamond);
  return j;
}

/// Instance serialization: the model document plus the derived fields.
inline nlohmann::json instance_to_json(const TwoBasisInstance& inst) {
  nlohmann::json j = model_to_json(inst.mdp, inst.c, inst.c_diamond);
  j["Q_star"] = matrix_to_json(inst.q_star);
  j["Q_diamond"] = matrix_to_json(inst.q_diamond);
  j["beta_diamond"] = inst.beta_diamond;
  j["eq28_residual"] = inst.eq28_residual;
  return j;
}

/// Atomic file write: the contents land under the final name in one rename.
inline void write_file_atomic(const std::string& path, const std::string& contents) {
  const std::filesystem::path target(path);
  const std::filesystem::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw ModelError("cannot open output file: " + tmp.string());
    out << contents;
    if (!out) throw ModelError("failed writing output file: " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

}  // namespace meanflowq

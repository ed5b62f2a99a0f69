#include "bdkf/serialization.hpp"

#include <set>
#include <string>

namespace bdkf {

namespace {

const Json& field(const Json& j, const std::string& key) {
  if (!j.is_object() || !j.contains(key)) throw ValidationError("missing required field \"" + key + "\"");
  return j.at(key);
}

template <typename T>
T number(const Json& j, const std::string& key) {
  const Json& v = field(j, key);
  if (!v.is_number()) throw ValidationError("field \"" + key + "\" must be a number");
  return v.get<T>();
}

void reject_unknown(const Json& j, const std::set<std::string>& allowed) {
  for (const auto& [key, value] : j.items())
    if (!allowed.contains(key)) throw ValidationError("unknown field \"" + key + "\" in system spec");
}

}  // namespace

Json matrix_to_json(const DenseMat& m) {
  Json rows = Json::array();
  for (Index a = 0; a < m.rows(); ++a) {
    Json row = Json::array();
    for (Index b = 0; b < m.cols(); ++b) row.push_back(m(a, b));
    rows.push_back(std::move(row));
  }
  return rows;
}

DenseMat matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw ValidationError("field \"" + what + "\" must be a nested row-major array");
  const Index rows = static_cast<Index>(j.size());
  const Index cols = static_cast<Index>(j[0].size());
  DenseMat m(rows, cols);
  for (Index a = 0; a < rows; ++a) {
    if (!j[a].is_array() || static_cast<Index>(j[a].size()) != cols)
      throw ValidationError("field \"" + what + "\" has ragged rows");
    for (Index b = 0; b < cols; ++b) {
      if (!j[a][b].is_number()) throw ValidationError("field \"" + what + "\" has a non-numeric entry");
      m(a, b) = j[a][b].get<double>();
    }
  }
  return m;
}

Json vector_to_json(const Vec& v) {
  Json out = Json::array();
  for (Index k = 0; k < v.size(); ++k) out.push_back(v(k));
  return out;
}

Json block_diag_to_json(const BlockDiagMat& m) {
  Json out = Json::array();
  for (Index i = 0; i < m.n(); ++i) out.push_back(matrix_to_json(m.block(i)));
  return out;
}

Json system_to_json(const CoupledSystem& sys) {
  Json subs = Json::array();
  for (const auto& s : sys.subsystems)
    subs.push_back({{"F", matrix_to_json(s.F)},
                    {"H", matrix_to_json(s.H)},
                    {"V", matrix_to_json(s.V)},
                    {"R", matrix_to_json(s.R)},
                    {"G", matrix_to_json(s.G)}});
  return {{"c", sys.c}, {"d", sys.d}, {"r", sys.r}, {"n", sys.n()},
          {"U", matrix_to_json(sys.U)}, {"subsystems", std::move(subs)}};
}

CoupledSystem system_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("system spec must be a JSON object");
  if (j.contains("generator")) {
    const Json& g = j.at("generator");
    if (!g.is_string()) throw ValidationError("field \"generator\" must be a string");
    const std::string kind = g.get<std::string>();
    if (kind == "identical_chain") {
      reject_unknown(j, {"generator", "beta", "n"});
      return make_identical_chain(number<double>(j, "beta"), number<Index>(j, "n"));
    }
    if (kind == "random") {
      reject_unknown(j, {"generator", "c", "d", "r", "n", "spectral_radius_cap", "seed"});
      return make_random_system(number<Index>(j, "c"), number<Index>(j, "d"), number<Index>(j, "r"),
                                number<Index>(j, "n"), number<double>(j, "spectral_radius_cap"),
                                RngSpec{number<std::uint64_t>(j, "seed")});
    }
    if (kind == "speckle") {
      reject_unknown(j, {"generator", "n_pixels", "r_modes", "drift_scale"});
      return make_speckle_system(number<Index>(j, "n_pixels"), number<Index>(j, "r_modes"),
                                 number<double>(j, "drift_scale"))
          .system;
    }
    throw ValidationError("unknown generator \"" + kind + "\"");
  }

  reject_unknown(j, {"c", "d", "r", "n", "U", "subsystems"});
  CoupledSystem sys;
  sys.c = number<Index>(j, "c");
  sys.d = number<Index>(j, "d");
  sys.r = number<Index>(j, "r");
  const Index n = number<Index>(j, "n");
  sys.U = matrix_from_json(field(j, "U"), "U");
  const Json& subs = field(j, "subsystems");
  if (!subs.is_array() || static_cast<Index>(subs.size()) != n)
    throw ValidationError("field \"subsystems\" must be an array of length n");
  for (const auto& s : subs) {
    reject_unknown(s, {"F", "H", "V", "R", "G"});
    sys.subsystems.push_back({matrix_from_json(field(s, "F"), "F"), matrix_from_json(field(s, "H"), "H"),
                              matrix_from_json(field(s, "V"), "V"), matrix_from_json(field(s, "R"), "R"),
                              matrix_from_json(field(s, "G"), "G")});
  }
  sys.validate();
  return sys;
}

}  // namespace bdkf

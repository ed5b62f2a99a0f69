#pragma once

// JSON documents for systems and analysis results. Matrices are nested
// row-major arrays: [[a00, a01, ...], [a10, ...], ...].

#include "json.hpp"

#include "bdkf/model.hpp"

namespace bdkf {

using Json = nlohmann::json;

Json matrix_to_json(const DenseMat& m);
DenseMat matrix_from_json(const Json& j, const std::string& what);
Json vector_to_json(const Vec& v);
Json block_diag_to_json(const BlockDiagMat& m);

// {"c","d","r","n","U","subsystems":[{"F","H","V","R","G"}, ...]}
Json system_to_json(const CoupledSystem& sys);

// Accepts either the explicit schema above or a generator document:
//   {"generator": "identical_chain", "beta": 0.5, "n": 8}
//   {"generator": "random", "c":2, "d":1, "r":2, "n":8, "spectral_radius_cap":0.95, "seed":1}
//   {"generator": "speckle", "n_pixels":256, "r_modes":6, "drift_scale":1.0}
// Throws ValidationError naming the missing or malformed field.
CoupledSystem system_from_json(const Json& j);

}  // namespace bdkf

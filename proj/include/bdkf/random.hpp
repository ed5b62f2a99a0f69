#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "bdkf/blockstruct.hpp"

namespace bdkf {

// Names a reproducible random stream. Only "mt19937_64" is implemented:
// the engine's output sequence is fixed by the C++ standard, and the
// normal/Poisson transforms below are ours rather than the library's
// implementation-defined distributions.
struct RngSpec {
  std::uint64_t seed = 0;
  std::string algorithm = "mt19937_64";
};

// Independent child stream `stream` of `parent` (splitmix64 seed mixing).
RngSpec derive_stream(const RngSpec& parent, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(const RngSpec& spec);

  // Uniform on the open interval (0, 1).
  double uniform();
  // Standard normal via Box-Muller.
  double normal();
  Vec normal_vec(Index size);
  // Inversion below mean 30, transformed rejection (PTRS) above.
  std::uint64_t poisson(double mean);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace bdkf

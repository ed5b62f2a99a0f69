#include <doctest.h>

#include "bdkf/serialization.hpp"
#include "oracles.hpp"

using namespace bdkf;
using oracle::Mat;

TEST_CASE("matrix round trip") {
  oracle::Gen g(1);
  const Mat m = g.gauss(3, 4);
  CHECK(matrix_from_json(matrix_to_json(m), "m") == m);
  CHECK_THROWS_AS(matrix_from_json(Json::parse("[[1,2],[3]]"), "m"), ValidationError);
  CHECK_THROWS_AS(matrix_from_json(Json::parse("[[1,\"a\"]]"), "m"), ValidationError);
}

TEST_CASE("system round trip") {
  const CoupledSystem s = make_random_system(2, 1, 3, 4, 0.9, {3});
  const CoupledSystem t = system_from_json(system_to_json(s));
  REQUIRE(t.n() == 4);
  CHECK(t.r == 3);
  CHECK(Mat(t.U) == Mat(s.U));
  for (Index i = 0; i < 4; ++i) {
    CHECK(Mat(t.subsystems[i].F) == Mat(s.subsystems[i].F));
    CHECK(Mat(t.subsystems[i].G) == Mat(s.subsystems[i].G));
    CHECK(Mat(t.subsystems[i].R) == Mat(s.subsystems[i].R));
  }
}

TEST_CASE("generator documents") {
  const CoupledSystem c = system_from_json({{"generator", "identical_chain"}, {"beta", 0.5}, {"n", 3}});
  CHECK(c.n() == 3);
  CHECK(c.subsystems[2].F(0, 1) == 0.5);

  const Json rnd = {{"generator", "random"}, {"c", 2}, {"d", 1}, {"r", 2}, {"n", 5},
                    {"spectral_radius_cap", 0.9}, {"seed", 4}};
  CHECK(Mat(system_from_json(rnd).subsystems[4].F) == Mat(make_random_system(2, 1, 2, 5, 0.9, {4}).subsystems[4].F));

  const CoupledSystem sp = system_from_json({{"generator", "speckle"}, {"n_pixels", 16}, {"r_modes", 2}, {"drift_scale", 1.0}});
  CHECK(sp.c == 2);
  CHECK(sp.n() == 16);

  try {
    system_from_json({{"generator", "identical_chain"}, {"beta", 0.5}});
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("\"n\"") != std::string::npos);
  }
  CHECK_THROWS_AS(system_from_json({{"generator", "nope"}}), ValidationError);
}

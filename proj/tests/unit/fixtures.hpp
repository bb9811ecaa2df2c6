#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfergodic/model.hpp"
#include "mfergodic/rng.hpp"

namespace fixtures {

using nlohmann::json;

// 1-d linear model dx = (b0 + B x + Bbar m + G a) dt + s0 dW with one reward term.
inline mfergodic::ModelSpec linear_1d(double B, double s0, const json& term, double Bbar = 0.0, double G = 0.0,
                                      std::vector<std::vector<double>> actions = {{0.0}}) {
  json j{{"dim", 1},
         {"drift", {{"B", {{B}}}, {"Bbar", {{Bbar}}}, {"G", {{G}}}}},
         {"diffusion", {{"s0", {s0}}}},
         {"reward", {{"terms", json::array({term})}}},
         {"action_set", {{"kind", "finite"}, {"points", actions}}}};
  return mfergodic::ModelSpec::from_json(j);
}

inline json cos_term() { return {{"shape", "cos"}}; }
inline json const_term(double c) { return {{"shape", "constant"}, {"amplitude", c}}; }

// Random row-major matrix with entries scale * N(0,1) + shift on the diagonal.
inline json random_matrix(mfergodic::RngStream& rng, std::size_t d, double scale, double shift) {
  json m = json::array();
  for (std::size_t i = 0; i < d; ++i) {
    json row = json::array();
    for (std::size_t k = 0; k < d; ++k) row.push_back(scale * rng.normal() + (i == k ? shift : 0.0));
    m.push_back(row);
  }
  return m;
}

}  // namespace fixtures

#pragma once

#include <vector>

namespace rwbsde {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre rule on [0, 1] (weights sum to 1).
QuadratureRule gauss_legendre_unit(int points);

/// Gauss-Hermite rule for the standard normal density: sum w_i f(x_i) ~ E f(G).
QuadratureRule gauss_hermite_normal(int points);

/// The fixed 8-point rule used for the theta-integrals of the discrete
/// Malliavin quotients.
const QuadratureRule& theta_rule();

}  // namespace rwbsde

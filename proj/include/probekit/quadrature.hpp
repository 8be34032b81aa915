#pragma once

#include "probekit/types.hpp"

namespace probekit {

// Symmetric quadrature rule on the reference triangle in barycentric
// coordinates. Weights sum to 1; integrals carry the area factor separately.
struct TriRule {
    Points bary;   // n x 3 barycentric coordinates
    VecX weight;   // n, sums to 1
    int degree = 0;
};

// Rules by polynomial exactness degree. Available: 1 (1 pt), 2 (3 pt),
// 5 (7 pt), 7 (15 pt). Requests in between round up.
const TriRule& tri_rule(int degree);

// Gauss-Legendre nodes/weights on [0,1]; cached per n.
struct LineRule {
    VecX node;
    VecX weight;
};
const LineRule& gauss_legendre_01(int n);

} // namespace probekit

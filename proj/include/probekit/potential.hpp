#pragma once

// Fundamental solution of the Laplace equation, panel quadrature for its
// layer kernels, and the boundary-reduced source energy integrals.

#include "probekit/errors.hpp"
#include "probekit/geometry.hpp"
#include "probekit/types.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace probekit {

// 1 / (4 pi |y|); throws SingularPoint at the origin.
double G(const Vec3& y);
// -y / (4 pi |y|^3)
Vec3 grad_G(const Vec3& y);

struct QuadParams {
    int degree = 5;    // base panel rule
    int max_depth = 8; // adaptive subdivision depth limit
    double eta = 2.0;  // refine while focus distance < eta * child diameter
    int duffy_n = 16;   // tensor Gauss points per direction on singular panels
};

// Adaptive integration of f(node, outward unit normal) over the whole
// surface, with panel subdivision graded toward the foci. The integrand must
// be smooth on the surface (foci strictly off it).
double integrate_surface(const TriSurface& s, const std::vector<Vec3>& foci,
                         const std::function<double(const Vec3&, const Vec3&)>& f,
                         const QuadParams& qp = {});

// P1-tested panel integrals over panel t for a target x off the surface:
//   single[j]   = int_T L_j(z) G(x - z) dS(z)
//   grad.col(j) = gradient of single[j] with respect to x
//   dlayer[j]   = int_T L_j(z) grad_G(z - x) . nu(z) dS(z)
void panel_integrals(const TriSurface& s, int t, const Vec3& x, Vec3& single,
                     Eigen::Matrix3d& grad, Vec3& dlayer,
                     const QuadParams& qp = {});

// Same single-layer row plus the flux row grad_G(x - z) . n_x for a target
// sitting on the surface itself. When x lies on panel t pass its barycentric
// coordinates there (vertex targets: a unit coordinate); the kernel is then
// integrated by Duffy transforms around x. The layer-potential jump term is
// NOT included here.
void panel_integrals_on_surface(const TriSurface& s, int t, const Vec3& x,
                                const Vec3& n_x,
                                const std::optional<Vec3>& bary_on_t,
                                Vec3& single, Vec3& flux,
                                const QuadParams& qp = {});

// int_D grad G(z - x) . grad G(z - y) dz reduced to the obstacle boundary;
// requires x, y outside the closed obstacle and eps_near away from it.
double energy_integral_obstacle(const Vec3& x, const Vec3& y,
                                const TriSurface& obstacle,
                                double eps_factor = 2.0,
                                const QuadParams& qp = {});

// Integral of the same product over the complement of the closed domain,
// reduced to the outer boundary; x, y strictly inside and eps_near away.
double energy_integral_exterior(const Vec3& x, const Vec3& y,
                                const TriSurface& outer,
                                double eps_factor = 2.0,
                                const QuadParams& qp = {});

} // namespace probekit

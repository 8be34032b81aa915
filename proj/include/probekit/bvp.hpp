#pragma once

#include "probekit/errors.hpp"
#include "probekit/geometry.hpp"
#include "probekit/potential.hpp"
#include "probekit/types.hpp"

#include <Eigen/Dense>

#include <array>
#include <functional>

namespace probekit::bvp {

enum class TraceRole { Dirichlet, Neumann };

// Nodal coefficients in the piecewise-linear vertex basis of one surface.
struct BoundaryTrace {
    const TriSurface* surface = nullptr;
    VecX values;
    TraceRole role = TraceRole::Dirichlet;
};

BoundaryTrace sample_trace(const TriSurface& s,
                           const std::function<double(const Vec3&)>& f,
                           TraceRole role);

// Factorized single-layer operator of a domain: indirect ansatz on both
// surfaces, Dirichlet rows collocated at outer vertices, Neumann rows
// collocated at obstacle vertices with the exterior-side jump. Immutable
// once built; every probe point only changes the right-hand side.
struct BemSystem {
    const Domain* dom = nullptr;
    QuadParams qp;

    MatX mass_outer;    // P1 mass matrices of the two surfaces
    MatX mass_obstacle; // empty without an obstacle
    Eigen::LLT<MatX> mass_outer_llt;

    MatX op;                            // assembled block operator
    Eigen::PartialPivLU<MatX> lu_mixed; // full block system (with obstacle)
    Eigen::PartialPivLU<MatX> lu_outer; // outer Dirichlet block alone
    double cond_estimate = 0;           // of the block actually factored

    // Galerkin-tested normal flux on the outer surface (interior side),
    // already paired with the test basis: nodal Neumann trace is
    // mass_outer^{-1} (flux_oo phi + flux_od psi).
    MatX flux_oo, flux_od;

    // Dirichlet trace on the obstacle: val_do phi + val_dd psi.
    MatX val_do, val_dd;

    // Gradient of the outer layer at obstacle vertices; feeds the Neumann
    // data of the star problem without re-integrating per probe point.
    std::array<MatX, 3> grad_do;

    int nvo() const { return dom ? dom->outer.nv() : 0; }
    int nvd() const {
        return dom && dom->has_obstacle() ? dom->obstacle->nv() : 0;
    }
    bool has_obstacle() const { return dom && dom->has_obstacle(); }
};

BemSystem build_system(const Domain& dom, const QuadParams& qp = {});

struct HarmonicSolution {
    const BemSystem* sys = nullptr;
    VecX density_outer;
    VecX density_obstacle; // empty for whole-domain (no obstacle) solves

    VecX dir_outer, neu_outer;       // nodal traces on the outer surface
    VecX dir_obstacle, neu_obstacle; // empty for whole-domain solves
    double bc_residual = 0;          // sup-norm residual at collocation nodes

    bool whole_domain() const { return density_obstacle.size() == 0; }

    // Evaluation away from the surfaces; the exclusion band is
    // eps_factor x max edge length of the nearby surface.
    double eval(const Vec3& y, double eps_factor = 2.0) const;
    Vec3 grad(const Vec3& y, double eps_factor = 2.0) const;
};

// Mixed problem: Dirichlet data on the outer surface, Neumann data on the
// obstacle (zero vectors allowed).
HarmonicSolution solve_mixed(const BemSystem& sys, const VecX& f_outer,
                             const VecX& h_obstacle);
HarmonicSolution solve_mixed(const BemSystem& sys,
                             const BoundaryTrace& dirichlet_on_outer,
                             const BoundaryTrace& neumann_on_obstacle);

// Pure Dirichlet problem on the whole outer domain, obstacle absent.
HarmonicSolution solve_dirichlet(const BemSystem& sys, const VecX& f_outer);

// The named solutions of the theory, all right-hand-side assemblies over the
// cached factorization. x must keep eps_factor x max_edge clearance from the
// surfaces carrying its data.
HarmonicSolution reflected_solution(const BemSystem& sys, const Vec3& x,
                                    double eps_factor = 2.0);
HarmonicSolution auxiliary_solution(const BemSystem& sys, const Vec3& x,
                                    double eps_factor = 2.0);
HarmonicSolution third_solution(const BemSystem& sys, const Vec3& x,
                                double eps_factor = 2.0);
HarmonicSolution green_regular(const BemSystem& sys, const Vec3& x,
                               double eps_factor = 2.0);
HarmonicSolution star_reflected(const BemSystem& sys, const Vec3& x,
                                double eps_factor = 2.0);

// Green function of the outer domain through its regular part.
double green_Omega(const HarmonicSolution& R_x, const Vec3& y, const Vec3& x,
                   double eps_factor = 2.0);

} // namespace probekit::bvp

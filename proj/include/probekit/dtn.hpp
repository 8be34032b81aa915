#pragma once

#include "probekit/bvp.hpp"
#include "probekit/errors.hpp"
#include "probekit/geometry.hpp"
#include "probekit/types.hpp"

#include <string>

namespace probekit::dtn {

enum class Provenance { WithObstacle, Background };

// Dirichlet-to-Neumann operator on the outer nodal basis, with the mass
// matrix that realizes the boundary pairing <g, f> = g^T M f.
struct DtNMatrix {
    MatX lambda;
    MatX mass;
    Provenance provenance = Provenance::Background;
    std::string fingerprint; // of the outer mesh

    int n() const { return static_cast<int>(lambda.rows()); }
};

// Column j is the Neumann trace of the solution whose Dirichlet data is the
// j-th nodal basis function (zero obstacle flux). Provenance follows the
// system: WithObstacle when the domain has one, Background otherwise.
DtNMatrix assemble_dtn(const bvp::BemSystem& sys);

// Same outer mesh and quadrature, obstacle ignored. On an obstacle-free
// system this runs the identical code path as assemble_dtn, so the two
// results agree bit for bit.
DtNMatrix assemble_background_dtn(const bvp::BemSystem& sys);

// Galerkin restriction of an operator assembled on the one-level refinement
// of `coarse` onto the coarse nodal basis. Both meshes must come from the
// same analytic-surface subdivision family (fine = next level of coarse).
// Cuts the assembly consistency error to the fine level's while keeping the
// coarse basis; this is the mitigation used when synthetic data must not be
// generated on the mesh it is inverted on.
DtNMatrix restrict_dtn(const DtNMatrix& fine, const TriSurface& fine_outer,
                       const TriSurface& coarse_outer);

// ||Lambda^T M - M Lambda||_F / ||M Lambda||_F
double symmetry_defect(const DtNMatrix& dtn);

// ||Lambda 1||_2 / ||Lambda||_F
double constant_annihilation(const DtNMatrix& dtn);

// <Lambda g, h> = (Lambda g)^T M h
double pair(const DtNMatrix& dtn, const VecX& g, const VecX& h);

// <(Lambda_0 - Lambda_D) g, h>; the operators must share basis and mesh.
double gap_pair(const DtNMatrix& background, const DtNMatrix& with_obstacle,
                const VecX& g, const VecX& h);

void require_matching(const DtNMatrix& dtn, const TriSurface& outer);

void save_dtn(const std::string& path, const DtNMatrix& dtn,
              bool binary = false);
DtNMatrix load_dtn(const std::string& path);

} // namespace probekit::dtn

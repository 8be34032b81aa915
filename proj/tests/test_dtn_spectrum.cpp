#include "doctest.h"

#include "probekit/dtn.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

using namespace probekit;

// The ball spectrum check needs better assembly consistency than direct
// collocation reaches on the canonical mesh, so the operator is assembled on
// the one-level refinement and restricted onto the canonical basis. This is
// the same pipeline the forward driver uses to keep synthetic data off the
// inversion mesh. Kept in its own binary: the fine assembly takes minutes.
TEST_CASE("restricted background operator reproduces the ball spectrum") {
    TriSurface coarse = build_sphere_mesh(Vec3::Zero(), 1.0, 3);
    Domain fine_dom = make_domain(build_sphere_mesh(Vec3::Zero(), 1.0, 4));
    bvp::BemSystem fine_sys = bvp::build_system(fine_dom);
    dtn::DtNMatrix fine = dtn::assemble_dtn(fine_sys);

    CHECK(dtn::symmetry_defect(fine) < 1e-12);
    CHECK(dtn::constant_annihilation(fine) < 1e-12);

    dtn::DtNMatrix l0 = dtn::restrict_dtn(fine, fine_dom.outer, coarse);
    CHECK(l0.n() == coarse.nv());
    CHECK(dtn::symmetry_defect(l0) < 1e-12);

    // the unit-ball operator multiplies the degree-l harmonic subspace by l;
    // compare multiplet means of the discrete spectrum
    MatX weak = l0.mass * l0.lambda;
    Eigen::GeneralizedSelfAdjointEigenSolver<MatX> es(
        0.5 * (weak + weak.transpose()), l0.mass);
    REQUIRE(es.info() == Eigen::Success);
    const VecX ev = es.eigenvalues();

    int idx = 0;
    for (int l = 0; l <= 5; ++l) {
        REQUIRE(idx + 2 * l + 1 <= ev.size());
        const double mean = ev.segment(idx, 2 * l + 1).mean();
        if (l == 0) {
            CHECK(std::abs(mean) < 1e-10);
        } else {
            MESSAGE("l=", l, ": cluster mean ", mean);
            CHECK(std::abs(mean - l) < 0.02 * l);
        }
        idx += 2 * l + 1;
    }
}

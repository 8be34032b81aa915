#include "doctest.h"

#include "probekit/bvp.hpp"
#include "probekit/runge.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

using namespace probekit;
using namespace probekit::runge;

namespace {

const Domain& domain2() {
    static Domain dom = make_domain(build_sphere_mesh(Vec3::Zero(), 1.0, 2));
    return dom;
}

const Vec3 kTip(0.6, 0, 0);

const Needle& needle2() {
    static Needle ndl = straight_needle(domain2(), kTip, Vec3(1, 0, 0));
    return ndl;
}

// one canonical five-stage fit shared by the read-only cases below
const NeedleSequence& sequence2() {
    static NeedleSequence seq = build_needle_sequence(domain2(), needle2());
    return seq;
}

// relative H1 error of stage n against the tip source over a ball grid
double h1_error(const NeedleSequence& seq, int n, const Vec3& center,
                double radius, double h) {
    const Vec3 x = seq.needle.tip();
    double num = 0, den = 0;
    for (double px = -radius; px <= radius; px += h)
        for (double py = -radius; py <= radius; py += h)
            for (double pz = -radius; pz <= radius; pz += h) {
                const Vec3 p = center + Vec3(px, py, pz);
                if ((p - center).norm() >= radius) continue;
                const double gv = G(p - x);
                const Vec3 gg = grad_G(p - x);
                const double v = seq.eval(n, p);
                const Vec3 gr = seq.grad(n, p);
                num += (v - gv) * (v - gv) + (gr - gg).squaredNorm();
                den += gv * gv + gg.squaredNorm();
            }
    return std::sqrt(num / den);
}

double needle_sample_max(const NeedleSequence& seq, int n) {
    const Vec3 x = seq.needle.tip();
    const Vec3 u = (seq.needle.entry() - x).normalized();
    double m = 0;
    for (double t : {0.08, 0.14, 0.20, 0.26, 0.32})
        m = std::max(m, std::abs(seq.eval(n, x + t * u)));
    return m;
}

} // namespace

TEST_CASE("schedule validation rejects malformed configs") {
    const Domain& dom = domain2();
    const Needle& ndl = needle2();
    NeedleSequenceConfig good;
    good.poles_per_stage = {40, 40, 40};
    good.tube_radius = {0.2, 0.1, 0.05};
    good.regularization = {1e-2, 1e-3, 1e-4};

    auto cfg = good;
    cfg.tube_radius = {0.2, 0.1};
    CHECK_THROWS_AS(build_needle_sequence(dom, ndl, cfg), Error);

    cfg = good;
    cfg.poles_per_stage = {40, 40};
    CHECK_THROWS_AS(build_needle_sequence(dom, ndl, cfg), Error);

    cfg = good;
    cfg.tube_radius[1] = -0.1;
    CHECK_THROWS_AS(build_needle_sequence(dom, ndl, cfg), Error);

    cfg = good;
    cfg.regularization[2] = 0.0;
    CHECK_THROWS_AS(build_needle_sequence(dom, ndl, cfg), Error);

    cfg = good;
    cfg.tube_radius = {0.2, 0.2, 0.1}; // not strictly decreasing
    CHECK_THROWS_AS(build_needle_sequence(dom, ndl, cfg), Error);

    cfg = good;
    cfg.regularization = {1e-2, 1e-2, 1e-3};
    CHECK_THROWS_AS(build_needle_sequence(dom, ndl, cfg), Error);

    cfg = good;
    cfg.poles_per_stage[0] = 5;
    CHECK_THROWS_AS(build_needle_sequence(dom, ndl, cfg), Error);

    cfg = good;
    cfg.matching_density = 0;
    CHECK_THROWS_AS(build_needle_sequence(dom, ndl, cfg), Error);
}

TEST_CASE("default schedule follows the canonical ladder") {
    const NeedleSequenceConfig cfg = default_needle_config(domain2());
    REQUIRE(cfg.poles_per_stage.size() == 5);
    for (int n = 1; n <= 5; ++n) {
        CHECK(cfg.poles_per_stage[n - 1] == 50 + 50 * n);
        CHECK(cfg.tube_radius[n - 1] ==
              doctest::Approx(0.2 * 2.0 * std::pow(2.0, -n)).epsilon(1e-12));
        CHECK(cfg.regularization[n - 1] ==
              doctest::Approx(1e-2 * std::pow(4.0, -n)).epsilon(1e-12));
    }
    CHECK(cfg.matching_density == 4);
    CHECK_FALSE(cfg.strict);
    CHECK(default_needle_config(domain2(), 3).poles_per_stage.size() == 3);
    CHECK_THROWS_AS(default_needle_config(domain2(), 2), Error);
}

TEST_CASE("needle endpoints must match the domain") {
    Domain small = make_domain(build_sphere_mesh(Vec3::Zero(), 0.8, 2));
    CHECK_THROWS_AS(build_needle_sequence(small, needle2()), DomainMismatch);
}

TEST_CASE("oversized tube starves the continuation segment") {
    NeedleSequenceConfig cfg;
    cfg.poles_per_stage = {60, 60, 60};
    cfg.tube_radius = {12.0, 11.0, 10.0};
    cfg.regularization = {1e-2, 1e-3, 1e-4};
    cfg.matching_density = 1;
    CHECK_THROWS_AS(build_needle_sequence(domain2(), needle2(), cfg),
                    PolePlacementFailure);
}

TEST_CASE("stage fits approximate the tip source away from the tube") {
    const NeedleSequence& seq = sequence2();
    const Domain& dom = domain2();
    REQUIRE(seq.stages() == 5);
    REQUIRE(seq.fit_error.size() == 5);
    CHECK_FALSE(seq.stagnated);

    for (int n = 0; n < 5; ++n) {
        CHECK(seq.poles[n].rows() == seq.config.poles_per_stage[n]);
        CHECK(seq.coeffs[n].size() == seq.poles[n].rows());
        CHECK(std::isfinite(seq.fit_error[n]));
        // every source sits strictly outside the closed domain
        for (int k = 0; k < seq.poles[n].rows(); ++k) {
            const Vec3 p = seq.poles[n].row(k);
            CHECK_FALSE(dom.outer.contains(p));
            CHECK(dom.outer.distance(p) > dom.outer.surface_tol);
        }
    }

    // discrepancy decreases across the tail of the schedule
    CHECK(seq.fit_error[3] <= seq.fit_error[2]);
    CHECK(seq.fit_error[4] <= seq.fit_error[3]);
    CHECK(seq.fit_error[3] < seq.fit_error[0]);
    CHECK(seq.fit_error[4] < seq.fit_error[1]);
    CHECK(seq.fit_error[4] < 1.3e-2);
}

TEST_CASE("stage approximants converge to the tip source near the obstacle region") {
    const NeedleSequence& seq = sequence2();
    // ball of radius 0.3 at the origin: the canonical obstacle neighborhood
    const double e1 = h1_error(seq, 0, Vec3::Zero(), 0.3, 0.06);
    const double e5 = h1_error(seq, 4, Vec3::Zero(), 0.3, 0.06);
    CHECK(e5 < 0.05);
    CHECK(e1 > 0.08); // early stages are visibly cruder
    CHECK(e5 < e1);
}

TEST_CASE("H1 error on a fixed ball away from the needle decreases") {
    const NeedleSequence& seq = sequence2();
    // ball of radius 0.1 centered 0.5 from the needle segment
    std::vector<double> err;
    for (int n = 0; n < 5; ++n)
        err.push_back(h1_error(seq, n, Vec3(0.1, 0, 0), 0.1, 0.025));
    for (int n = 0; n + 1 < 5; ++n)
        CHECK(err[n + 1] < 1.02 * err[n]); // small slack at the fit plateau
    CHECK(err[4] * 5.0 < err[0]);
}

TEST_CASE("stage values on the needle blow up") {
    const NeedleSequence& seq = sequence2();
    std::vector<double> m;
    for (int n = 0; n < 5; ++n) m.push_back(needle_sample_max(seq, n));
    CHECK(m[0] > 1.0);
    CHECK(m[2] < m[3]);
    CHECK(m[3] < m[4]);
    CHECK(m[4] > 10.0 * m[0]);
}

TEST_CASE("evaluation, gradient and trace agree") {
    const NeedleSequence& seq = sequence2();
    const Vec3 y(0.2, 0.1, -0.3);

    // central differences of eval against grad
    const double h = 1e-5;
    const Vec3 g = seq.grad(4, y);
    for (int a = 0; a < 3; ++a) {
        Vec3 dy = Vec3::Zero();
        dy[a] = h;
        const double fd = (seq.eval(4, y + dy) - seq.eval(4, y - dy)) / (2 * h);
        CHECK(std::abs(fd - g[a]) < 5e-4 * (1.0 + std::abs(g[a])));
    }

    // a pole sum is harmonic; the discrete Laplacian only sees noise
    double lap = -6.0 * seq.eval(0, y);
    const double hh = 1e-2;
    for (int a = 0; a < 3; ++a) {
        Vec3 dy = Vec3::Zero();
        dy[a] = hh;
        lap += seq.eval(0, y + dy) + seq.eval(0, y - dy);
    }
    CHECK(std::abs(lap / (hh * hh)) < 0.1);

    const VecX tr = seq.trace_outer(4);
    REQUIRE(tr.size() == domain2().outer.nv());
    for (int i : {0, 41, 101}) {
        const Vec3 v = domain2().outer.V.row(i);
        CHECK(tr[i] == doctest::Approx(seq.eval(4, v)).epsilon(1e-12));
    }
}

TEST_CASE("rebuilding the sequence is deterministic") {
    const NeedleSequence& seq = sequence2();
    const NeedleSequence again = build_needle_sequence(domain2(), needle2());
    for (int n = 0; n < 5; ++n) {
        CHECK(seq.fit_error[n] == again.fit_error[n]);
        CHECK((seq.coeffs[n] - again.coeffs[n]).norm() == 0.0);
    }
}

TEST_CASE("starved schedule stagnates and strict mode escalates") {
    NeedleSequenceConfig cfg;
    cfg.poles_per_stage = {60, 20, 10}; // basis shrinks while the tube narrows
    cfg.tube_radius = {0.2, 0.1, 0.05};
    cfg.regularization = {1e-2, 2.5e-3, 6.25e-4};
    cfg.matching_density = 2;

    const NeedleSequence seq = build_needle_sequence(domain2(), needle2(), cfg);
    CHECK(seq.stagnated);
    CHECK(seq.fit_error[1] > seq.fit_error[0]);
    CHECK(seq.fit_error[2] > seq.fit_error[1]);

    cfg.strict = true;
    CHECK_THROWS_AS(build_needle_sequence(domain2(), needle2(), cfg),
                    FitStagnation);
}

TEST_CASE("corrected sequence satisfies the boundary identity") {
    const NeedleSequence& seq = sequence2();
    const bvp::BemSystem sys = bvp::build_system(domain2());
    const bvp::HarmonicSolution R_x = bvp::green_regular(sys, kTip, 0.5);

    const NeedleSequence seqC = corrected_sequence(seq, R_x);
    CHECK(seqC.corrected);

    // on the outer boundary G(. - x) - v_n == -(v_n + R_x) holds nodally,
    // because the regular part carries the trace -G(. - x) by construction
    const TriSurface& O = domain2().outer;
    for (int n : {0, 4}) {
        const VecX tr = seq.trace_outer(n);
        const VecX trC = seqC.trace_outer(n);
        for (int i = 0; i < O.nv(); ++i) {
            const double lhs = G(Vec3(O.V.row(i)) - kTip) - tr[i];
            const double rhs = -trC[i];
            CHECK(std::abs(lhs - rhs) < 1e-12 * (1.0 + std::abs(lhs)));
        }
    }

    // interior evaluations pick up the regular part
    const Vec3 y(0.2, 0.1, -0.3);
    CHECK(seqC.eval(4, y, 0.5) ==
          doctest::Approx(seq.eval(4, y) + R_x.eval(y, 0.5)).epsilon(1e-12));
    CHECK((seqC.grad(4, y, 0.5) - (seq.grad(4, y) + R_x.grad(y, 0.5))).norm() <
          1e-12);

    CHECK_THROWS_AS(corrected_sequence(seqC, R_x), Error);

    // regular part solved for a different source point
    const bvp::HarmonicSolution R_other =
        bvp::green_regular(sys, Vec3(0.3, 0.2, 0), 0.5);
    CHECK_THROWS_AS(corrected_sequence(seq, R_other), DomainMismatch);

    // regular part solved on a different outer mesh
    Domain coarse = make_domain(build_sphere_mesh(Vec3::Zero(), 1.0, 1));
    const bvp::BemSystem sys1 = bvp::build_system(coarse);
    const bvp::HarmonicSolution R_coarse = bvp::green_regular(sys1, kTip, 0.5);
    CHECK_THROWS_AS(corrected_sequence(seq, R_coarse), DomainMismatch);

    // a shell solution is not a whole-domain regular part
    Domain shell = make_domain(build_sphere_mesh(Vec3::Zero(), 1.0, 1),
                               build_sphere_mesh(Vec3::Zero(), 0.3, 1));
    const bvp::BemSystem sysD = bvp::build_system(shell);
    const bvp::HarmonicSolution refl = bvp::reflected_solution(sysD, Vec3(0.55, 0, 0), 0.5);
    CHECK_THROWS_AS(corrected_sequence(seq, refl), DomainMismatch);
}

TEST_CASE("difference to the tip source guards its singular point") {
    const NeedleSequence& seq = sequence2();
    const CarlemanSequence gn = carleman(seq);
    REQUIRE(gn.stages() == 5);

    const Vec3 y(0.0, 0.25, 0.1);
    CHECK(gn.eval(3, y) ==
          doctest::Approx(G(y - kTip) - seq.eval(3, y)).epsilon(1e-12));
    CHECK((gn.grad(3, y) - (grad_G(y - kTip) - seq.grad(3, y))).norm() < 1e-12);

    CHECK_THROWS_AS(gn.eval(0, kTip), SingularPoint);
    CHECK_THROWS_AS(gn.grad(0, kTip), SingularPoint);
}

TEST_CASE("sequence cache round trips and rejects foreign files") {
    namespace fs = std::filesystem;
    const NeedleSequence& seq = sequence2();
    const std::string path =
        (fs::temp_directory_path() / "probekit_test_seq.nseq").string();

    save_needle_sequence(path, seq);
    const NeedleSequence back = load_needle_sequence(path, domain2());
    REQUIRE(back.stages() == seq.stages());
    CHECK(back.stagnated == seq.stagnated);
    CHECK(back.config.matching_density == seq.config.matching_density);
    for (int n = 0; n < seq.stages(); ++n) {
        CHECK(back.fit_error[n] == seq.fit_error[n]);
        CHECK((back.poles[n] - seq.poles[n]).norm() == 0.0);
        CHECK((back.coeffs[n] - seq.coeffs[n]).norm() == 0.0);
        CHECK(back.config.tube_radius[n] == seq.config.tube_radius[n]);
        CHECK(back.config.regularization[n] == seq.config.regularization[n]);
    }
    CHECK((back.needle.points - seq.needle.points).norm() == 0.0);

    // same file against a different mesh
    Domain other = make_domain(build_sphere_mesh(Vec3::Zero(), 1.0, 1));
    CHECK_THROWS_AS(load_needle_sequence(path, other), FingerprintMismatch);

    // corrected sequences are not cacheable
    const bvp::BemSystem sys = bvp::build_system(domain2());
    const NeedleSequence seqC =
        corrected_sequence(seq, bvp::green_regular(sys, kTip, 0.5));
    CHECK_THROWS_AS(save_needle_sequence(path + ".c", seqC), Error);

    const std::string bogus =
        (fs::temp_directory_path() / "probekit_test_bogus.nseq").string();
    { // wrong magic
        std::FILE* f = std::fopen(bogus.c_str(), "wb");
        REQUIRE(f);
        std::fprintf(f, "NOT-A-SEQUENCE 1\n");
        std::fclose(f);
        CHECK_THROWS_AS(load_needle_sequence(bogus, domain2()), FormatError);
    }
    { // unsupported version
        std::FILE* f = std::fopen(bogus.c_str(), "wb");
        REQUIRE(f);
        std::fprintf(f, "PROBEKIT-NSEQ 7\n");
        std::fclose(f);
        CHECK_THROWS_AS(load_needle_sequence(bogus, domain2()), FormatError);
    }
    { // truncated body
        std::FILE* f = std::fopen(bogus.c_str(), "wb");
        REQUIRE(f);
        std::fprintf(f, "PROBEKIT-NSEQ 1\n%s\n2\n0 0 1\n",
                     mesh_fingerprint(domain2().outer).c_str());
        std::fclose(f);
        CHECK_THROWS_AS(load_needle_sequence(bogus, domain2()), FormatError);
    }
    CHECK_THROWS_AS(load_needle_sequence(path + ".missing", domain2()),
                    FormatError);

    fs::remove(path);
    fs::remove(bogus);
}

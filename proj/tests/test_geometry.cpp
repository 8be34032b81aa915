#include "doctest.h"

#include "probekit/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace probekit;

namespace {

constexpr double kPi = std::numbers::pi;

Domain ball_with_obstacle(int level = 2) {
    return make_domain(build_sphere_mesh(Vec3::Zero(), 1.0, level),
                       build_sphere_mesh(Vec3::Zero(), 0.3, level));
}

double flat_area(const TriSurface& s) {
    double a = 0;
    for (int t = 0; t < s.nt(); ++t) {
        const Vec3 u = Vec3(s.V.row(s.F(t, 1))) - Vec3(s.V.row(s.F(t, 0)));
        const Vec3 w = Vec3(s.V.row(s.F(t, 2))) - Vec3(s.V.row(s.F(t, 0)));
        a += 0.5 * u.cross(w).norm();
    }
    return a;
}

} // namespace

TEST_CASE("icosphere counts: level 0 is the icosahedron") {
    const TriSurface s = build_sphere_mesh(Vec3::Zero(), 1.0, 0);
    CHECK(s.nv() == 12);
    CHECK(s.nt() == 20);
    for (int l = 0; l <= 3; ++l) {
        const TriSurface m = build_sphere_mesh(Vec3::Zero(), 1.0, l);
        CHECK(m.nv() == 10 * (1 << (2 * l)) * (1 << (2 * l)) / (1 << (2 * l)) + 2);
        CHECK(m.nv() == 10 * static_cast<int>(std::pow(4, l)) + 2);
        CHECK(m.nt() == 20 * static_cast<int>(std::pow(4, l)));
    }
}

TEST_CASE("level-3 unit sphere: enclosed volume within 0.5% of 4pi/3") {
    const TriSurface s = build_sphere_mesh(Vec3::Zero(), 1.0, 3);
    const double want = 4.0 * kPi / 3.0;
    CHECK(std::abs(s.enclosed_volume() - want) / want < 0.005);
    CHECK(std::abs(s.total_area() - 4.0 * kPi) / (4.0 * kPi) < 0.005);
    CHECK(s.signed_volume() > 0);
}

TEST_CASE("flat volume and area converge at O(h^2)") {
    const double vol_ref = 4.0 * kPi / 3.0;
    const double area_ref = 4.0 * kPi;
    double verr[4], aerr[4];
    for (int l = 1; l <= 3; ++l) {
        const TriSurface s = build_sphere_mesh(Vec3::Zero(), 1.0, l);
        verr[l] = std::abs(s.signed_volume() - vol_ref) / vol_ref;
        aerr[l] = std::abs(flat_area(s) - area_ref) / area_ref;
    }
    for (int l = 1; l <= 2; ++l) {
        CHECK(verr[l] / verr[l + 1] > 3.0);
        CHECK(verr[l] / verr[l + 1] < 5.0);
        CHECK(aerr[l] / aerr[l + 1] > 3.0);
        CHECK(aerr[l] / aerr[l + 1] < 5.0);
    }
}

TEST_CASE("off-center small sphere: vertices at exact radius") {
    const Vec3 c(1, 0, 0);
    const TriSurface s = build_sphere_mesh(c, 0.3, 2);
    for (int i = 0; i < s.nv(); ++i)
        CHECK(std::abs((Vec3(s.V.row(i)) - c).norm() - 0.3) < 1e-12);
}

TEST_CASE("quadrature weights per triangle sum to the stored area") {
    const TriSurface s = build_sphere_mesh(Vec3::Zero(), 1.0, 2);
    for (int t = 0; t < s.nt(); ++t) {
        double w = 0;
        for (int q = 0; q < s.q_per_tri; ++q) w += s.qweight(t * s.q_per_tri + q);
        CHECK(std::abs(w - s.area(t)) <= 1e-12 * s.area(t));
    }
}

TEST_CASE("quadrature nodes of an analytic mesh lie on the smooth surface") {
    const TriSurface s = build_sphere_mesh(Vec3(0.2, -0.1, 0.4), 0.7, 2);
    for (int r = 0; r < s.qnode.rows(); ++r) {
        const Vec3 p = s.qnode.row(r);
        CHECK(std::abs((p - Vec3(0.2, -0.1, 0.4)).norm() - 0.7) < 1e-13);
        const Vec3 n = s.qnormal.row(r);
        CHECK(std::abs(n.norm() - 1.0) < 1e-13);
        CHECK(n.dot((p - Vec3(0.2, -0.1, 0.4)).normalized()) ==
              doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("ellipsoid mesh: vertices on the analytic surface, dproject consistent") {
    const Vec3 c(0.1, 0.2, -0.3), semi(1.0, 0.7, 0.5);
    const TriSurface s = build_ellipsoid_mesh(c, semi, 2);
    for (int i = 0; i < s.nv(); ++i) {
        const Vec3 q = (Vec3(s.V.row(i)) - c).cwiseQuotient(semi);
        CHECK(std::abs(q.squaredNorm() - 1.0) < 1e-12);
    }
    // finite-difference check of the projection Jacobian
    const AnalyticSurface& an = *s.analytic;
    const Vec3 p(0.9, 0.5, 0.1);
    const Eigen::Matrix3d J = an.dproject(p);
    const double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
        Vec3 dp = Vec3::Zero();
        dp(k) = h;
        const Vec3 fd = (an.project(p + dp) - an.project(p - dp)) / (2 * h);
        CHECK((fd - J.col(k)).norm() < 1e-7);
    }
}

TEST_CASE("mass matrix: symmetric positive definite, rows sum to areas") {
    const TriSurface s = build_sphere_mesh(Vec3::Zero(), 1.0, 1);
    const MatX M = assemble_mass_matrix(s);
    CHECK((M - M.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(std::abs(M.sum() - s.total_area()) < 1e-10 * s.total_area());
    Eigen::LLT<MatX> llt(M);
    CHECK(llt.info() == Eigen::Success);
}

TEST_CASE("winding number: ~1 inside, ~0 outside") {
    const TriSurface s = build_sphere_mesh(Vec3::Zero(), 1.0, 1);
    CHECK(s.winding(Vec3(0.2, 0.1, -0.3)) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(s.winding(Vec3(1.7, 0.2, 0.0)) == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(s.contains(Vec3(0.0, 0.0, 0.9)));
    CHECK(!s.contains(Vec3(0.0, 0.0, 1.1)));
}

TEST_CASE("classify_point: canonical ball-with-obstacle examples") {
    const Domain dom = ball_with_obstacle();
    {
        const PointClass pc = classify_point(dom, Vec3(0.6, 0, 0));
        CHECK(pc.region == Region::InShell);
        CHECK(pc.dist_obstacle == doctest::Approx(0.3).epsilon(5e-3));
        CHECK(pc.dist_outer == doctest::Approx(0.4).epsilon(5e-3));
    }
    CHECK(classify_point(dom, Vec3(0, 0, 0)).region == Region::InObstacle);
    CHECK(classify_point(dom, Vec3(2, 0, 0)).region == Region::Exterior);
    // a mesh vertex sits inside the tolerance band
    CHECK_THROWS_AS(classify_point(dom, Vec3(dom.obstacle->V.row(0))),
                    AmbiguousPoint);
    CHECK_THROWS_AS(classify_point(dom, Vec3(dom.outer.V.row(5))), AmbiguousPoint);
}

TEST_CASE("classification matches analytic signed distance away from the band") {
    const Domain dom = ball_with_obstacle(2);
    const double tol = std::max(dom.outer.surface_tol, dom.obstacle->surface_tol);
    int checked = 0;
    for (double r : {0.05, 0.15, 0.35, 0.6, 0.9, 1.2, 1.6}) {
        for (const Vec3& dir :
             {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0.4, -0.7, 0.59).normalized()}) {
            const Vec3 x = r * dir;
            if (std::abs(r - 0.3) < 3 * tol || std::abs(r - 1.0) < 3 * tol) continue;
            const PointClass pc = classify_point(dom, x);
            const Region want = r < 0.3   ? Region::InObstacle
                                : r < 1.0 ? Region::InShell
                                          : Region::Exterior;
            CHECK(pc.region == want);
            ++checked;
        }
    }
    CHECK(checked >= 18);
}

TEST_CASE("domain construction rejects bad nesting") {
    TriSurface outer = build_sphere_mesh(Vec3::Zero(), 1.0, 1);
    CHECK_THROWS_AS(
        make_domain(build_sphere_mesh(Vec3::Zero(), 1.0, 1),
                    build_sphere_mesh(Vec3(0.9, 0, 0), 0.3, 1)),
        Error);
    // obstacle equal to outer: touches
    CHECK_THROWS_AS(make_domain(build_sphere_mesh(Vec3::Zero(), 1.0, 1),
                                build_sphere_mesh(Vec3::Zero(), 0.999, 1)),
                    Error);
    // clearance is measured to the flat outer mesh, so it sits a facet-sag
    // below the analytic 0.7 at this refinement
    const Domain ok = ball_with_obstacle(1);
    CHECK(ok.clearance > 0.6);
    CHECK(ok.clearance < 0.7);
}

TEST_CASE("needle: straight probes hitting and avoiding the obstacle") {
    const Domain dom = ball_with_obstacle();
    {
        Points pts(2, 3);
        pts << 1, 0, 0, 0.6, 0, 0;
        const Needle n = make_needle(dom, pts);
        CHECK(n.segments() == 1);
        CHECK(n.length() == doctest::Approx(0.4).epsilon(1e-12));
        const NeedleHitReport rep = needle_hits_obstacle(dom, n);
        CHECK(rep.verdict == NeedleHit::Avoids);
        CHECK(rep.min_distance == doctest::Approx(0.3).epsilon(5e-3));
    }
    {
        Points pts(2, 3);
        pts << 1, 0, 0, -0.6, 0, 0;
        const Needle n = make_needle(dom, pts);
        const NeedleHitReport rep = needle_hits_obstacle(dom, n);
        CHECK(rep.verdict == NeedleHit::Hits);
        CHECK(rep.min_distance == 0.0);
    }
    {
        // tip inside the obstacle counts as a hit even without edge crossings
        Points pts(2, 3);
        pts << 1, 0, 0, 0.1, 0, 0;
        const NeedleHitReport rep = needle_hits_obstacle(dom, make_needle(dom, pts));
        CHECK(rep.verdict == NeedleHit::Hits);
    }
}

TEST_CASE("needle: polyline arcing around the obstacle avoids it") {
    const Domain dom = ball_with_obstacle();
    Points pts(4, 3);
    pts << 0, 0, 1,
           0, 0.7, 0.5,
           0.35, 0.7, 0,
           0.6, 0, 0;
    const Needle n = make_needle(dom, pts);
    CHECK(n.segments() == 3);
    CHECK(Vec3(n.tip()) == Vec3(0.6, 0, 0));
    const NeedleHitReport rep = needle_hits_obstacle(dom, n);
    CHECK(rep.verdict == NeedleHit::Avoids);
    CHECK(rep.min_distance > 0.2);
}

TEST_CASE("straight_needle finds the entry point by ray casting") {
    const Domain dom = ball_with_obstacle();
    const Needle n = straight_needle(dom, Vec3(0.6, 0, 0), Vec3(1, 0, 0));
    CHECK(n.points.rows() == 2);
    CHECK(Vec3(n.tip()) == Vec3(0.6, 0, 0));
    CHECK(Vec3(n.entry()).norm() == doctest::Approx(1.0).epsilon(5e-3));
    CHECK(Vec3(n.entry())(0) > 0.99);
}

TEST_CASE("needle validation rejects bad polylines") {
    const Domain dom = ball_with_obstacle();
    {
        // first point interior instead of on the boundary
        Points pts(2, 3);
        pts << 0.8, 0, 0, 0.5, 0, 0;
        CHECK_THROWS_AS(make_needle(dom, pts), Error);
    }
    {
        // interior point outside the domain
        Points pts(3, 3);
        pts << 1, 0, 0, 1.4, 0, 0, 0.5, 0, 0;
        CHECK_THROWS_AS(make_needle(dom, pts), Error);
    }
    {
        // self-intersecting bow tie
        Points pts(5, 3);
        pts << 1, 0, 0,
               0.5, 0.3, 0,
               0.5, -0.3, 0.001,
               0.78, 0.1, 0,
               0.4, 0.1, -0.3;
        bool threw = false;
        try {
            make_needle(dom, pts);
        } catch (const Error&) {
            threw = true;
        }
        CHECK(!threw); // clearance 1e-3 is above tolerance: valid
        Points bad(4, 3);
        bad << 1, 0, 0,
               0.5, 0.3, 0,
               0.5, -0.3, 0,
               0.75, 0.15, 0; // crosses segment 1 in-plane
        CHECK_THROWS_AS(make_needle(dom, bad), Error);
    }
}

TEST_CASE("scan grid: lattice classification and near flags") {
    const Domain dom = ball_with_obstacle();
    const double eps = 0.15;
    const ScanGrid g = make_scan_grid(dom, Vec3(-0.9, -0.9, -0.9),
                                      Vec3(0.9, 0.9, 0.9), 0.3, eps);
    REQUIRE(g.size() > 0);
    REQUIRE(g.lattice.has_value());
    CHECK(g.lattice->nx == 7);
    CHECK(g.lattice->ny == 7);
    CHECK(g.lattice->nz == 7);
    CHECK(static_cast<int>(g.lattice->row_of_cell.size()) == 7 * 7 * 7);
    int from_map = 0;
    for (int idx = 0; idx < 343; ++idx) {
        const int row = g.lattice->row_of_cell[idx];
        if (row < 0) continue;
        ++from_map;
        const int i = idx % 7, j = (idx / 7) % 7, k = idx / 49;
        const Vec3 p = g.lattice->lo + g.lattice->spacing * Vec3(i, j, k);
        CHECK((Vec3(g.points.row(row)) - p).norm() < 1e-14);
    }
    CHECK(from_map == g.size());
    for (int r = 0; r < g.size(); ++r) {
        const Vec3 p = g.points.row(r);
        CHECK(p.norm() < 1.0);
        CHECK(g.dist_outer(r) > 0);
        const bool near =
            g.dist_outer(r) < eps || g.dist_obstacle(r) < eps;
        CHECK(static_cast<bool>(g.near_flag[r]) == near);
        CHECK((g.region[r] == Region::InShell) == (p.norm() > 0.3));
    }
}

TEST_CASE("scan grid from explicit points drops exterior points") {
    const Domain dom = ball_with_obstacle();
    Points pts(3, 3);
    pts << 0.5, 0, 0, 1.5, 0, 0, 0, 0.1, 0;
    const ScanGrid g = make_scan_grid(dom, pts, 0.05);
    CHECK(g.size() == 2);
    CHECK(g.region[0] == Region::InShell);
    CHECK(g.region[1] == Region::InObstacle);
}

TEST_CASE("mesh file round trip preserves the fingerprint") {
    const TriSurface s = build_sphere_mesh(Vec3(0.1, 0.2, 0.3), 0.77, 1);
    const std::string path = "roundtrip_mesh.txt";
    save_mesh(path, s);
    const TriSurface r = load_mesh(path);
    CHECK(mesh_fingerprint(r) == mesh_fingerprint(s));
    CHECK((r.V - s.V).cwiseAbs().maxCoeff() == 0.0);
    CHECK((r.F - s.F).cwiseAbs().maxCoeff() == 0);
    std::remove(path.c_str());
}

TEST_CASE("mesh loader rejects malformed files with named invariants") {
    const std::string path = "bad_mesh.txt";
    {
        std::ofstream f(path);
        f << "NOT-A-MESH 1\n4 4\n";
    }
    CHECK_THROWS_AS(load_mesh(path), FormatError);
    {
        // tetrahedron with an out-of-range index
        std::ofstream f(path);
        f << "PROBEKIT-MESH 1\n4 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n"
          << "0 2 1\n0 1 3\n0 3 2\n1 2 9\n";
    }
    try {
        load_mesh(path);
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("index out of range") != std::string::npos);
    }
    {
        // open surface: octahedron missing one face
        std::ofstream f(path);
        f << "PROBEKIT-MESH 1\n6 7\n"
          << "1 0 0\n-1 0 0\n0 1 0\n0 -1 0\n0 0 1\n0 0 -1\n"
          << "0 2 4\n2 1 4\n1 3 4\n3 0 4\n2 0 5\n1 2 5\n3 1 5\n";
    }
    try {
        load_mesh(path);
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("exactly 2 triangles") != std::string::npos);
    }
    {
        // inward orientation: flip all faces
        std::ofstream f(path);
        f << "PROBEKIT-MESH 1\n4 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n"
          << "0 1 2\n0 3 1\n0 2 3\n1 3 2\n";
    }
    try {
        load_mesh(path);
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("signed volume") != std::string::npos);
    }
    std::remove(path.c_str());
}

TEST_CASE("valid tetrahedron loads as a flat mesh") {
    const std::string path = "tet_mesh.txt";
    {
        std::ofstream f(path);
        f << "PROBEKIT-MESH 1\n4 4\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n"
          << "0 2 1\n0 1 3\n0 3 2\n1 2 3\n";
    }
    const TriSurface t = load_mesh(path);
    CHECK(t.signed_volume() == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
    CHECK(t.enclosed_volume() == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(!t.analytic.has_value());
    std::remove(path.c_str());
}

TEST_CASE("needle file round trip") {
    const Domain dom = ball_with_obstacle();
    Points pts(3, 3);
    pts << 0, 0, 1, 0.1, 0.55, 0.4, 0.6, 0, 0;
    const Needle n = make_needle(dom, pts);
    const std::string path = "roundtrip_needle.txt";
    save_needle(path, n);
    const Needle r = load_needle(path, dom);
    CHECK((r.points - n.points).cwiseAbs().maxCoeff() == 0.0);
    {
        std::ofstream f(path);
        f << "PROBEKIT-NEEDLE 2\n0 0 1\n";
    }
    CHECK_THROWS_AS(load_needle_points(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("ray_surface_exit finds the first crossing") {
    const TriSurface s = build_sphere_mesh(Vec3::Zero(), 1.0, 2);
    const Vec3 hit = ray_surface_exit(s, Vec3(0.2, 0, 0), Vec3(1, 0, 0));
    CHECK(hit.norm() == doctest::Approx(1.0).epsilon(2e-3));
    CHECK(hit(0) > 0.99);
    CHECK_THROWS_AS(ray_surface_exit(s, Vec3(2, 0, 0), Vec3(1, 0, 0)), Error);
}

TEST_CASE("eps_near scales with the mesh edge length") {
    const TriSurface s = build_sphere_mesh(Vec3::Zero(), 1.0, 2);
    CHECK(eps_near(s) == doctest::Approx(2.0 * s.max_edge));
    CHECK(eps_near(s, 0.2) == doctest::Approx(0.2 * s.max_edge));
}

TEST_CASE("fingerprint changes when geometry changes") {
    const TriSurface a = build_sphere_mesh(Vec3::Zero(), 1.0, 1);
    const TriSurface b = build_sphere_mesh(Vec3::Zero(), 1.0000001, 1);
    CHECK(mesh_fingerprint(a) != mesh_fingerprint(b));
    CHECK(mesh_fingerprint(a).size() == 16);
}

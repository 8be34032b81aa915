#include "probekit/geometry.hpp"

#include "probekit/quadrature.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <queue>
#include <sstream>
#include <unordered_map>

namespace probekit {

namespace {

constexpr double kPi = std::numbers::pi;

uint64_t fnv1a(const void* data, size_t len, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace

// ---------------------------------------------------------------- analytic

Vec3 AnalyticSurface::project(const Vec3& p) const {
    const Vec3 q = (p - center).cwiseQuotient(semi);
    const double n = q.norm();
    if (n == 0.0) throw Error("AnalyticSurface::project: point at center");
    return center + semi.cwiseProduct(q / n);
}

Vec3 AnalyticSurface::unit_normal(const Vec3& on_surface) const {
    // gradient of sum((p-c)_i^2 / semi_i^2), normalized
    const Vec3 g = (on_surface - center).cwiseQuotient(semi.cwiseProduct(semi));
    return g.normalized();
}

Eigen::Matrix3d AnalyticSurface::dproject(const Vec3& p) const {
    const Vec3 q = (p - center).cwiseQuotient(semi);
    const double n = q.norm();
    const Vec3 qh = q / n;
    const Eigen::Matrix3d P = Eigen::Matrix3d::Identity() - qh * qh.transpose();
    return semi.asDiagonal() * P * (1.0 / n) *
           semi.cwiseInverse().asDiagonal();
}

// ------------------------------------------------------------ TriSurface

double TriSurface::signed_volume() const {
    double vol = 0;
    for (int t = 0; t < nt(); ++t) {
        const Vec3 a = V.row(F(t, 0));
        const Vec3 b = V.row(F(t, 1));
        const Vec3 c = V.row(F(t, 2));
        vol += a.dot(b.cross(c));
    }
    return vol / 6.0;
}

double TriSurface::enclosed_volume() const {
    double vol = 0;
    for (int r = 0; r < static_cast<int>(qweight.size()); ++r)
        vol += qweight(r) * qnode.row(r).dot(qnormal.row(r));
    return vol / 3.0;
}

double TriSurface::distance(const Vec3& x) const {
    double d = std::numeric_limits<double>::infinity();
    for (int t = 0; t < nt(); ++t) {
        d = std::min(d, point_triangle_distance(x, V.row(F(t, 0)),
                                                V.row(F(t, 1)), V.row(F(t, 2))));
    }
    return d;
}

double TriSurface::winding(const Vec3& x) const {
    // Van Oosterom-Strackee signed solid angles, summed over the surface.
    double omega = 0;
    for (int t = 0; t < nt(); ++t) {
        const Vec3 a = Vec3(V.row(F(t, 0))) - x;
        const Vec3 b = Vec3(V.row(F(t, 1))) - x;
        const Vec3 c = Vec3(V.row(F(t, 2))) - x;
        const double la = a.norm(), lb = b.norm(), lc = c.norm();
        const double num = a.dot(b.cross(c));
        const double den =
            la * lb * lc + a.dot(b) * lc + b.dot(c) * la + c.dot(a) * lb;
        omega += 2.0 * std::atan2(num, den);
    }
    return omega / (4.0 * kPi);
}

// ------------------------------------------------------------ primitives

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b,
                               const Vec3& c) {
    // Ericson, Real-Time Collision Detection, closest point on triangle.
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0 && d2 <= 0) return (p - a).norm();

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0 && d4 <= d3) return (p - b).norm();

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0 && d1 >= 0 && d3 <= 0) {
        const double v = d1 / (d1 - d3);
        return (p - (a + v * ab)).norm();
    }

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0 && d5 <= d6) return (p - c).norm();

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0 && d2 >= 0 && d6 <= 0) {
        const double w = d2 / (d2 - d6);
        return (p - (a + w * ac)).norm();
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + w * (c - b))).norm();
    }

    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom, w = vc * denom;
    return (p - (a + ab * v + ac * w)).norm();
}

namespace {

double segment_segment_distance(const Vec3& p1, const Vec3& q1, const Vec3& p2,
                                const Vec3& q2) {
    const Vec3 d1 = q1 - p1, d2 = q2 - p2, r = p1 - p2;
    const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
    double s = 0, t = 0;
    const double eps = 1e-30;
    if (a <= eps && e <= eps) return r.norm();
    if (a <= eps) {
        t = std::clamp(f / e, 0.0, 1.0);
    } else {
        const double c = d1.dot(r);
        if (e <= eps) {
            s = std::clamp(-c / a, 0.0, 1.0);
        } else {
            const double b = d1.dot(d2);
            const double denom = a * e - b * b;
            if (denom > eps) s = std::clamp((b * f - c * e) / denom, 0.0, 1.0);
            t = (b * s + f) / e;
            if (t < 0) {
                t = 0;
                s = std::clamp(-c / a, 0.0, 1.0);
            } else if (t > 1) {
                t = 1;
                s = std::clamp((b - c) / a, 0.0, 1.0);
            }
        }
    }
    return ((p1 + d1 * s) - (p2 + d2 * t)).norm();
}

bool ray_hits_triangle(const Vec3& orig, const Vec3& dir, const Vec3& a,
                       const Vec3& b, const Vec3& c, double& t_out) {
    // Moller-Trumbore; no culling.
    const Vec3 e1 = b - a, e2 = c - a;
    const Vec3 pv = dir.cross(e2);
    const double det = e1.dot(pv);
    if (std::abs(det) < 1e-14) return false;
    const double inv = 1.0 / det;
    const Vec3 tv = orig - a;
    const double u = tv.dot(pv) * inv;
    if (u < -1e-12 || u > 1 + 1e-12) return false;
    const Vec3 qv = tv.cross(e1);
    const double v = dir.dot(qv) * inv;
    if (v < -1e-12 || u + v > 1 + 1e-12) return false;
    const double t = e2.dot(qv) * inv;
    if (t <= 0) return false;
    t_out = t;
    return true;
}

} // namespace

bool segment_hits_triangle(const Vec3& p, const Vec3& q, const Vec3& a,
                           const Vec3& b, const Vec3& c) {
    const Vec3 d = q - p;
    const double len = d.norm();
    if (len == 0) return false;
    double t = 0;
    if (!ray_hits_triangle(p, d / len, a, b, c, t)) return false;
    return t <= len * (1 + 1e-12);
}

double segment_triangle_distance(const Vec3& p, const Vec3& q, const Vec3& a,
                                 const Vec3& b, const Vec3& c) {
    if (segment_hits_triangle(p, q, a, b, c)) return 0.0;
    double d = std::min(point_triangle_distance(p, a, b, c),
                        point_triangle_distance(q, a, b, c));
    d = std::min(d, segment_segment_distance(p, q, a, b));
    d = std::min(d, segment_segment_distance(p, q, b, c));
    d = std::min(d, segment_segment_distance(p, q, c, a));
    return d;
}

Vec3 ray_surface_exit(const TriSurface& s, const Vec3& origin, const Vec3& dir) {
    const Vec3 d = dir.normalized();
    double best = std::numeric_limits<double>::infinity();
    for (int t = 0; t < s.nt(); ++t) {
        double th = 0;
        if (ray_hits_triangle(origin, d, s.V.row(s.F(t, 0)), s.V.row(s.F(t, 1)),
                              s.V.row(s.F(t, 2)), th)) {
            best = std::min(best, th);
        }
    }
    if (!std::isfinite(best)) throw Error("ray_surface_exit: ray misses the surface");
    return origin + best * d;
}

// ------------------------------------------------------------ construction

TriSurface make_tri_surface(Points V, Triangles F,
                            std::optional<AnalyticSurface> analytic,
                            int quad_degree) {
    TriSurface s;
    s.V = std::move(V);
    s.F = std::move(F);
    s.analytic = std::move(analytic);

    const int nv = s.nv(), nt = s.nt();
    if (nv < 4 || nt < 4) throw FormatError("mesh invariant violated: too few vertices/triangles for a closed surface");
    for (int t = 0; t < nt; ++t)
        for (int k = 0; k < 3; ++k)
            if (s.F(t, k) < 0 || s.F(t, k) >= nv)
                throw FormatError("mesh invariant violated: triangle index out of range");

    // Closed + orientable: every undirected edge in exactly 2 triangles, and
    // its two directed copies run in opposite directions.
    std::unordered_map<uint64_t, std::pair<int, int>> edges; // (count, dir balance)
    auto key = [nv](int i, int j) {
        return static_cast<uint64_t>(std::min(i, j)) * static_cast<uint64_t>(nv) +
               static_cast<uint64_t>(std::max(i, j));
    };
    for (int t = 0; t < nt; ++t) {
        for (int k = 0; k < 3; ++k) {
            const int i = s.F(t, k), j = s.F(t, (k + 1) % 3);
            if (i == j) throw FormatError("mesh invariant violated: degenerate triangle edge");
            auto& e = edges[key(i, j)];
            e.first += 1;
            e.second += (i < j) ? 1 : -1;
        }
    }
    for (const auto& [k, e] : edges) {
        (void)k;
        if (e.first != 2)
            throw FormatError("mesh invariant violated: edge not shared by exactly 2 triangles");
        if (e.second != 0)
            throw FormatError("mesh invariant violated: inconsistent triangle orientation");
    }

    // Single connected component over vertex adjacency.
    {
        std::vector<std::vector<int>> adj(nv);
        for (int t = 0; t < nt; ++t)
            for (int k = 0; k < 3; ++k) {
                adj[s.F(t, k)].push_back(s.F(t, (k + 1) % 3));
            }
        std::vector<char> seen(nv, 0);
        std::queue<int> bfs;
        bfs.push(0);
        seen[0] = 1;
        int cnt = 1;
        while (!bfs.empty()) {
            const int u = bfs.front();
            bfs.pop();
            for (int w : adj[u])
                if (!seen[w]) {
                    seen[w] = 1;
                    ++cnt;
                    bfs.push(w);
                }
        }
        if (cnt != nv)
            throw FormatError("mesh invariant violated: surface not connected (or unused vertices)");
    }

    // Flat geometry, orientation, scales.
    s.face_normal.resize(nt, 3);
    double max_e2 = 0;
    for (int t = 0; t < nt; ++t) {
        const Vec3 a = s.V.row(s.F(t, 0));
        const Vec3 b = s.V.row(s.F(t, 1));
        const Vec3 c = s.V.row(s.F(t, 2));
        const Vec3 cr = (b - a).cross(c - a);
        const double n2 = cr.norm();
        if (n2 <= 0) throw FormatError("mesh invariant violated: zero-area triangle");
        s.face_normal.row(t) = cr / n2;
        max_e2 = std::max({max_e2, (b - a).squaredNorm(), (c - b).squaredNorm(),
                           (a - c).squaredNorm()});
    }
    s.max_edge = std::sqrt(max_e2);
    if (s.signed_volume() <= 0)
        throw FormatError("mesh invariant violated: normals not consistently outward (signed volume <= 0)");

    const Vec3 lo = s.V.colwise().minCoeff();
    const Vec3 hi = s.V.colwise().maxCoeff();
    s.diameter = (hi - lo).norm();

    // Quadrature, curved when an analytic surface is attached.
    const TriRule& rule = tri_rule(quad_degree);
    const int q = static_cast<int>(rule.bary.rows());
    s.q_per_tri = q;
    s.qnode.resize(nt * q, 3);
    s.qweight.resize(nt * q);
    s.qnormal.resize(nt * q, 3);
    s.qshape.resize(nt * q, 3);
    s.area.resize(nt);
    double sag = 0;
    for (int t = 0; t < nt; ++t) {
        const Vec3 a = s.V.row(s.F(t, 0));
        const Vec3 b = s.V.row(s.F(t, 1));
        const Vec3 c = s.V.row(s.F(t, 2));
        double at = 0;
        for (int i = 0; i < q; ++i) {
            const double l0 = rule.bary(i, 0), l1 = rule.bary(i, 1), l2 = rule.bary(i, 2);
            const Vec3 pf = l0 * a + l1 * b + l2 * c;
            Vec3 z, nrm;
            double jac;
            if (s.analytic) {
                z = s.analytic->project(pf);
                const Eigen::Matrix3d J = s.analytic->dproject(pf);
                const Vec3 tu = J * (b - a);
                const Vec3 tv = J * (c - a);
                Vec3 cr = tu.cross(tv);
                jac = cr.norm();
                nrm = s.analytic->unit_normal(z);
            } else {
                z = pf;
                const Vec3 cr = (b - a).cross(c - a);
                jac = cr.norm();
                nrm = s.face_normal.row(t);
            }
            const int row = t * q + i;
            s.qnode.row(row) = z;
            s.qweight(row) = 0.5 * rule.weight(i) * jac;
            s.qnormal.row(row) = nrm;
            s.qshape.row(row) << l0, l1, l2;
            at += s.qweight(row);
        }
        s.area(t) = at;
        if (s.analytic) {
            const Vec3 cen = (a + b + c) / 3.0;
            sag = std::max(sag, (s.analytic->project(cen) - cen).norm());
        }
    }
    s.surface_tol = s.analytic ? std::max(1.5 * sag, 1e-12 * s.diameter)
                               : 1e-6 * s.diameter;

    // Area-weighted centroid from quadrature nodes.
    Vec3 cen = Vec3::Zero();
    for (int r = 0; r < nt * q; ++r) cen += s.qweight(r) * Vec3(s.qnode.row(r));
    s.centroid = cen / s.qweight.sum();

    // Vertex normals: analytic where available, else angle-weighted average.
    s.vertex_normal = Points::Zero(nv, 3);
    if (s.analytic) {
        for (int i = 0; i < nv; ++i)
            s.vertex_normal.row(i) = s.analytic->unit_normal(
                s.analytic->project(s.V.row(i)));
    } else {
        for (int t = 0; t < nt; ++t) {
            for (int k = 0; k < 3; ++k) {
                const Vec3 p = s.V.row(s.F(t, k));
                const Vec3 u = Vec3(s.V.row(s.F(t, (k + 1) % 3))) - p;
                const Vec3 w = Vec3(s.V.row(s.F(t, (k + 2) % 3))) - p;
                const double ang =
                    std::acos(std::clamp(u.normalized().dot(w.normalized()), -1.0, 1.0));
                s.vertex_normal.row(s.F(t, k)) += ang * s.face_normal.row(t);
            }
        }
        for (int i = 0; i < nv; ++i)
            s.vertex_normal.row(i).normalize();
    }
    return s;
}

// ------------------------------------------------------------- icosphere

TriSurface build_ellipsoid_mesh(const Vec3& center, const Vec3& semi, int level,
                                int quad_degree) {
    if (semi.minCoeff() <= 0) throw Error("build_ellipsoid_mesh: semi-axes must be positive");
    if (level < 0) throw Error("build_ellipsoid_mesh: level must be >= 0");

    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    Points V(12, 3);
    V << -1, phi, 0,  1, phi, 0,  -1, -phi, 0,  1, -phi, 0,
          0, -1, phi,  0, 1, phi,  0, -1, -phi,  0, 1, -phi,
          phi, 0, -1,  phi, 0, 1,  -phi, 0, -1,  -phi, 0, 1;
    for (int i = 0; i < 12; ++i) V.row(i).normalize();
    Triangles F(20, 3);
    F << 0, 11, 5,  0, 5, 1,   0, 1, 7,   0, 7, 10,  0, 10, 11,
         1, 5, 9,   5, 11, 4,  11, 10, 2, 10, 7, 6,  7, 1, 8,
         3, 9, 4,   3, 4, 2,   3, 2, 6,   3, 6, 8,   3, 8, 9,
         4, 9, 5,   2, 4, 11,  6, 2, 10,  8, 6, 7,   9, 8, 1;

    for (int l = 0; l < level; ++l) {
        const int nv = static_cast<int>(V.rows());
        const int nt = static_cast<int>(F.rows());
        std::unordered_map<uint64_t, int> mid;
        std::vector<Vec3> newv;
        newv.reserve(nv + 3 * nt / 2);
        for (int i = 0; i < nv; ++i) newv.push_back(V.row(i));
        auto midpoint = [&](int i, int j) {
            const uint64_t k = static_cast<uint64_t>(std::min(i, j)) * 1000000ULL +
                               static_cast<uint64_t>(std::max(i, j));
            auto it = mid.find(k);
            if (it != mid.end()) return it->second;
            const Vec3 m = (newv[i] + newv[j]).normalized();
            newv.push_back(m);
            const int idx = static_cast<int>(newv.size()) - 1;
            mid.emplace(k, idx);
            return idx;
        };
        Triangles NF(nt * 4, 3);
        for (int t = 0; t < nt; ++t) {
            const int a = F(t, 0), b = F(t, 1), c = F(t, 2);
            const int ab = midpoint(a, b), bc = midpoint(b, c), ca = midpoint(c, a);
            NF.row(4 * t + 0) << a, ab, ca;
            NF.row(4 * t + 1) << b, bc, ab;
            NF.row(4 * t + 2) << c, ca, bc;
            NF.row(4 * t + 3) << ab, bc, ca;
        }
        V.resize(static_cast<int>(newv.size()), 3);
        for (size_t i = 0; i < newv.size(); ++i) V.row(static_cast<int>(i)) = newv[i];
        F = NF;
    }

    AnalyticSurface an;
    an.kind = (semi(0) == semi(1) && semi(1) == semi(2))
                  ? AnalyticSurface::Kind::Sphere
                  : AnalyticSurface::Kind::Ellipsoid;
    an.center = center;
    an.semi = semi;
    Points VS(V.rows(), 3);
    for (int i = 0; i < V.rows(); ++i)
        VS.row(i) = center + semi.cwiseProduct(Vec3(V.row(i)));
    return make_tri_surface(std::move(VS), std::move(F), an, quad_degree);
}

TriSurface build_sphere_mesh(const Vec3& center, double radius, int level,
                             int quad_degree) {
    if (radius <= 0) throw Error("build_sphere_mesh: radius must be positive");
    return build_ellipsoid_mesh(center, Vec3::Constant(radius), level, quad_degree);
}

// ---------------------------------------------------------------- algebra

MatX assemble_mass_matrix(const TriSurface& s) {
    const int n = s.nv();
    MatX M = MatX::Zero(n, n);
    for (int t = 0; t < s.nt(); ++t) {
        for (int q = 0; q < s.q_per_tri; ++q) {
            const int row = t * s.q_per_tri + q;
            const double w = s.qweight(row);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    M(s.F(t, i), s.F(t, j)) += w * s.qshape(row, i) * s.qshape(row, j);
        }
    }
    return M;
}

std::string mesh_fingerprint(const TriSurface& s) {
    uint64_t h = 1469598103934665603ULL;
    const int nv = s.nv(), nt = s.nt();
    h = fnv1a(&nv, sizeof nv, h);
    h = fnv1a(&nt, sizeof nt, h);
    for (int i = 0; i < nv; ++i)
        for (int k = 0; k < 3; ++k) {
            const double v = s.V(i, k);
            h = fnv1a(&v, sizeof v, h);
        }
    for (int t = 0; t < nt; ++t)
        for (int k = 0; k < 3; ++k) {
            const int f = s.F(t, k);
            h = fnv1a(&f, sizeof f, h);
        }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
    return std::string(buf);
}

double eps_near(const TriSurface& s, double factor) {
    return factor * s.max_edge;
}

// ----------------------------------------------------------------- domain

Domain make_domain(TriSurface outer, std::optional<TriSurface> obstacle) {
    Domain d;
    d.outer = std::move(outer);
    d.obstacle = std::move(obstacle);
    if (d.obstacle) {
        const TriSurface& ob = *d.obstacle;
        double clear = std::numeric_limits<double>::infinity();
        for (int i = 0; i < ob.nv(); ++i) {
            const Vec3 v = ob.V.row(i);
            if (!d.outer.contains(v))
                throw Error("make_domain: obstacle vertex outside the outer surface");
            clear = std::min(clear, d.outer.distance(v));
        }
        if (clear <= d.outer.surface_tol + ob.surface_tol)
            throw Error("make_domain: obstacle touches the outer surface");
        for (int i = 0; i < d.outer.nv(); ++i) {
            if (ob.contains(d.outer.V.row(i)))
                throw Error("make_domain: outer vertex inside the obstacle");
        }
        d.clearance = clear;
    } else {
        d.clearance = std::numeric_limits<double>::infinity();
    }
    return d;
}

PointClass classify_point(const Domain& dom, const Vec3& x) {
    PointClass pc{};
    pc.dist_outer = dom.outer.distance(x);
    pc.dist_obstacle = std::numeric_limits<double>::infinity();
    if (pc.dist_outer < dom.outer.surface_tol)
        throw AmbiguousPoint("classify_point: point within mesh tolerance of the outer surface");
    const bool inside_outer = dom.outer.contains(x);
    if (dom.has_obstacle()) {
        pc.dist_obstacle = dom.obstacle->distance(x);
        if (pc.dist_obstacle < dom.obstacle->surface_tol)
            throw AmbiguousPoint("classify_point: point within mesh tolerance of the obstacle surface");
        if (!inside_outer) {
            pc.region = Region::Exterior;
        } else {
            pc.region = dom.obstacle->contains(x) ? Region::InObstacle : Region::InShell;
        }
    } else {
        pc.region = inside_outer ? Region::InShell : Region::Exterior;
    }
    return pc;
}

// ----------------------------------------------------------------- needle

double Needle::length() const {
    double len = 0;
    for (int i = 0; i + 1 < points.rows(); ++i)
        len += (Vec3(points.row(i + 1)) - Vec3(points.row(i))).norm();
    return len;
}

Needle make_needle(const Domain& dom, const Points& pts) {
    if (pts.rows() < 2) throw Error("make_needle: needle requires at least 2 points");
    const TriSurface& out = dom.outer;
    const Vec3 first = pts.row(0);
    if (out.distance(first) > std::max(out.surface_tol, 1e-12 * out.diameter))
        throw Error("make_needle: first point not on the outer surface");
    for (int i = 1; i < pts.rows(); ++i) {
        const Vec3 p = pts.row(i);
        if (!out.contains(p) || out.distance(p) <= out.surface_tol)
            throw Error("make_needle: interior point not strictly inside the domain");
    }
    // Non-self-intersection: non-adjacent segments must keep clear distance.
    const double tol = 1e-9 * out.diameter;
    for (int i = 0; i + 1 < pts.rows(); ++i) {
        if ((Vec3(pts.row(i + 1)) - Vec3(pts.row(i))).norm() < tol)
            throw Error("make_needle: zero-length segment");
        for (int j = i + 2; j + 1 < pts.rows(); ++j) {
            const double d = segment_segment_distance(pts.row(i), pts.row(i + 1),
                                                      pts.row(j), pts.row(j + 1));
            if (d < tol) throw Error("make_needle: needle self-intersects");
        }
    }
    Needle n;
    n.points = pts;
    return n;
}

Needle straight_needle(const Domain& dom, const Vec3& tip, const Vec3& direction) {
    if (direction.norm() == 0) throw Error("straight_needle: zero direction");
    const Vec3 entry = ray_surface_exit(dom.outer, tip, direction.normalized());
    Points pts(2, 3);
    pts.row(0) = entry;
    pts.row(1) = tip;
    return make_needle(dom, pts);
}

NeedleHitReport needle_hits_obstacle(const Domain& dom, const Needle& needle) {
    NeedleHitReport rep{};
    rep.min_distance = std::numeric_limits<double>::infinity();
    if (!dom.has_obstacle()) {
        rep.verdict = NeedleHit::Avoids;
        return rep;
    }
    const TriSurface& ob = *dom.obstacle;
    bool inside = false;
    for (int i = 0; i < needle.points.rows(); ++i)
        if (ob.contains(needle.points.row(i))) inside = true;
    for (int i = 0; i + 1 < needle.points.rows(); ++i) {
        const Vec3 p = needle.points.row(i);
        const Vec3 q = needle.points.row(i + 1);
        for (int t = 0; t < ob.nt(); ++t) {
            const double d = segment_triangle_distance(
                p, q, ob.V.row(ob.F(t, 0)), ob.V.row(ob.F(t, 1)), ob.V.row(ob.F(t, 2)));
            rep.min_distance = std::min(rep.min_distance, d);
        }
    }
    if (inside || rep.min_distance == 0.0) {
        rep.verdict = NeedleHit::Hits;
    } else if (rep.min_distance < ob.surface_tol) {
        rep.verdict = NeedleHit::Hits;
        rep.tangential = true;
    } else {
        rep.verdict = NeedleHit::Avoids;
    }
    return rep;
}

// -------------------------------------------------------------- scan grid

namespace {

ScanGrid classify_grid(const Domain& dom, const Points& pts, double eps,
                       std::optional<ScanGrid::Lattice> lat,
                       std::vector<int>* keep_map) {
    ScanGrid g;
    std::vector<int> kept;
    kept.reserve(pts.rows());
    std::vector<Region> regions;
    std::vector<double> douter, dobs;
    for (int i = 0; i < pts.rows(); ++i) {
        try {
            const PointClass pc = classify_point(dom, pts.row(i));
            if (pc.region == Region::Exterior) {
                if (keep_map) keep_map->push_back(-1);
                continue;
            }
            kept.push_back(i);
            regions.push_back(pc.region);
            douter.push_back(pc.dist_outer);
            dobs.push_back(pc.dist_obstacle);
            if (keep_map) keep_map->push_back(static_cast<int>(kept.size()) - 1);
        } catch (const AmbiguousPoint&) {
            if (keep_map) keep_map->push_back(-1);
        }
    }
    const int n = static_cast<int>(kept.size());
    g.points.resize(n, 3);
    g.dist_outer.resize(n);
    g.dist_obstacle.resize(n);
    g.region = std::move(regions);
    g.near_flag.resize(n);
    for (int r = 0; r < n; ++r) {
        g.points.row(r) = pts.row(kept[r]);
        g.dist_outer(r) = douter[r];
        g.dist_obstacle(r) = dobs[r];
        g.near_flag[r] = (douter[r] < eps || dobs[r] < eps) ? 1 : 0;
    }
    g.lattice = std::move(lat);
    return g;
}

} // namespace

ScanGrid make_scan_grid(const Domain& dom, const Vec3& lo, const Vec3& hi,
                        double spacing, double eps) {
    if (spacing <= 0) throw Error("make_scan_grid: spacing must be positive");
    ScanGrid::Lattice lat;
    lat.lo = lo;
    lat.spacing = spacing;
    lat.nx = static_cast<int>(std::floor((hi(0) - lo(0)) / spacing + 1e-9)) + 1;
    lat.ny = static_cast<int>(std::floor((hi(1) - lo(1)) / spacing + 1e-9)) + 1;
    lat.nz = static_cast<int>(std::floor((hi(2) - lo(2)) / spacing + 1e-9)) + 1;
    Points pts(lat.nx * lat.ny * lat.nz, 3);
    int r = 0;
    for (int k = 0; k < lat.nz; ++k)
        for (int j = 0; j < lat.ny; ++j)
            for (int i = 0; i < lat.nx; ++i)
                pts.row(r++) = lo + spacing * Vec3(i, j, k);
    std::vector<int> keep;
    keep.reserve(pts.rows());
    ScanGrid g = classify_grid(dom, pts, eps, std::nullopt, &keep);
    lat.row_of_cell = std::move(keep);
    g.lattice = std::move(lat);
    return g;
}

ScanGrid make_scan_grid(const Domain& dom, const Points& pts, double eps) {
    return classify_grid(dom, pts, eps, std::nullopt, nullptr);
}

// --------------------------------------------------------------- file I/O

void save_mesh(const std::string& path, const TriSurface& s) {
    std::ofstream f(path);
    if (!f) throw Error("save_mesh: cannot open " + path);
    f << "PROBEKIT-MESH 1\n" << s.nv() << ' ' << s.nt() << '\n';
    char buf[96];
    for (int i = 0; i < s.nv(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", s.V(i, 0), s.V(i, 1),
                      s.V(i, 2));
        f << buf;
    }
    for (int t = 0; t < s.nt(); ++t)
        f << s.F(t, 0) << ' ' << s.F(t, 1) << ' ' << s.F(t, 2) << '\n';
    if (!f) throw Error("save_mesh: write failed for " + path);
}

TriSurface load_mesh(const std::string& path, int quad_degree) {
    std::ifstream f(path);
    if (!f) throw FormatError("load_mesh: cannot open " + path);
    std::string magic;
    int version = 0;
    f >> magic >> version;
    if (magic != "PROBEKIT-MESH" || version != 1)
        throw FormatError("load_mesh: bad header (expected PROBEKIT-MESH 1)");
    int nv = 0, nt = 0;
    f >> nv >> nt;
    if (!f || nv <= 0 || nt <= 0) throw FormatError("load_mesh: bad counts line");
    Points V(nv, 3);
    for (int i = 0; i < nv; ++i) {
        f >> V(i, 0) >> V(i, 1) >> V(i, 2);
        if (!f) throw FormatError("load_mesh: truncated vertex list");
    }
    Triangles F(nt, 3);
    for (int t = 0; t < nt; ++t) {
        f >> F(t, 0) >> F(t, 1) >> F(t, 2);
        if (!f) throw FormatError("load_mesh: truncated triangle list");
    }
    return make_tri_surface(std::move(V), std::move(F), std::nullopt, quad_degree);
}

void save_needle(const std::string& path, const Needle& n) {
    std::ofstream f(path);
    if (!f) throw Error("save_needle: cannot open " + path);
    f << "PROBEKIT-NEEDLE 1\n";
    char buf[96];
    for (int i = 0; i < n.points.rows(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g\n", n.points(i, 0),
                      n.points(i, 1), n.points(i, 2));
        f << buf;
    }
    if (!f) throw Error("save_needle: write failed for " + path);
}

Points load_needle_points(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw FormatError("load_needle: cannot open " + path);
    std::string line;
    if (!std::getline(f, line) || line.rfind("PROBEKIT-NEEDLE 1", 0) != 0)
        throw FormatError("load_needle: bad header (expected PROBEKIT-NEEDLE 1)");
    std::vector<Vec3> pts;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        Vec3 p;
        ss >> p(0) >> p(1) >> p(2);
        if (!ss) throw FormatError("load_needle: bad point line: " + line);
        pts.push_back(p);
    }
    Points P(static_cast<int>(pts.size()), 3);
    for (size_t i = 0; i < pts.size(); ++i) P.row(static_cast<int>(i)) = pts[i];
    return P;
}

Needle load_needle(const std::string& path, const Domain& dom) {
    return make_needle(dom, load_needle_points(path));
}

} // namespace probekit

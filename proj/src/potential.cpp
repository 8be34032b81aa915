#include "probekit/potential.hpp"

#include "probekit/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace probekit {

namespace {

constexpr double kPi = std::numbers::pi;

} // namespace

double G(const Vec3& y) {
    const double r = y.norm();
    if (r == 0.0) throw SingularPoint("G: evaluation at the source point");
    return 1.0 / (4.0 * kPi * r);
}

Vec3 grad_G(const Vec3& y) {
    const double r = y.norm();
    if (r == 0.0) throw SingularPoint("grad_G: evaluation at the source point");
    return -y / (4.0 * kPi * r * r * r);
}

namespace {

// Geometry of one panel of a (possibly curved) surface, for quadrature over
// barycentric sub-triangles. All positions flow through the analytic
// projection when the surface carries one.
struct PanelFrame {
    const TriSurface* s;
    Vec3 c0, c1, c2; // flat corner positions of panel t

    PanelFrame(const TriSurface& surf, int t) : s(&surf) {
        c0 = surf.V.row(surf.F(t, 0));
        c1 = surf.V.row(surf.F(t, 1));
        c2 = surf.V.row(surf.F(t, 2));
    }

    Vec3 flat(const Vec3& b) const { return b(0) * c0 + b(1) * c1 + b(2) * c2; }

    Vec3 lift(const Vec3& b) const {
        const Vec3 p = flat(b);
        return s->analytic ? s->analytic->project(p) : p;
    }

    // surface point, unit normal and area scale |t_u x t_v| for the flat
    // tangents (du, dv) attached at barycentric position b
    void frame(const Vec3& b, const Vec3& du, const Vec3& dv, Vec3& z, Vec3& n,
               double& jac) const {
        const Vec3 p = flat(b);
        if (s->analytic) {
            z = s->analytic->project(p);
            const Eigen::Matrix3d J = s->analytic->dproject(p);
            const Vec3 tu = J * du;
            const Vec3 tv = J * dv;
            const Vec3 cr = tu.cross(tv);
            jac = cr.norm();
            n = s->analytic->unit_normal(z);
        } else {
            z = p;
            const Vec3 cr = du.cross(dv);
            jac = cr.norm();
            n = cr.normalized();
        }
    }
};

// Sink(z, n, w, bary) accumulates one quadrature node.

// Fixed rule over the sub-triangle with barycentric corners (b0, b1, b2).
template <class Sink>
void rule_on_subtri(const PanelFrame& pf, const Vec3& b0, const Vec3& b1,
                    const Vec3& b2, const TriRule& rule, Sink&& sink) {
    const Vec3 du_b = b1 - b0, dv_b = b2 - b0;
    const Vec3 du = pf.flat(b1) - pf.flat(b0);
    const Vec3 dv = pf.flat(b2) - pf.flat(b0);
    for (int i = 0; i < rule.bary.rows(); ++i) {
        const Vec3 b = b0 + rule.bary(i, 1) * du_b + rule.bary(i, 2) * dv_b;
        Vec3 z, n;
        double jac;
        pf.frame(b, du, dv, z, n, jac);
        sink(z, n, 0.5 * rule.weight(i) * jac, b);
    }
}

// Duffy tensor rule over the sub-triangle (apex, bi, bj); the map
// b(s,u) = apex + s ((1-u)(bi-apex) + u (bj-apex)) concentrates nodes at the
// apex and its Jacobian cancels a 1/r kernel singularity there.
template <class Sink>
void duffy_on_subtri(const PanelFrame& pf, const Vec3& apex, const Vec3& bi,
                     const Vec3& bj, int n, Sink&& sink) {
    const LineRule& gl = gauss_legendre_01(n);
    const Vec3 e_i = bi - apex, e_j = bj - apex;
    const Vec3 pa = pf.flat(apex);
    const Vec3 pi_ = pf.flat(bi), pj = pf.flat(bj);
    for (int a = 0; a < n; ++a) {
        const double sV = gl.node(a);
        for (int b = 0; b < n; ++b) {
            const double u = gl.node(b);
            const Vec3 bary = apex + sV * ((1 - u) * e_i + u * e_j);
            // flat tangents of the (s,u) map
            const Vec3 dpds = (1 - u) * (pi_ - pa) + u * (pj - pa);
            const Vec3 dpdu = sV * (pj - pi_);
            Vec3 z, nrm;
            double jac;
            pf.frame(bary, dpds, dpdu, z, nrm, jac);
            sink(z, nrm, gl.weight(a) * gl.weight(b) * jac, bary);
        }
    }
}

// Adaptive refinement toward the foci; leaves get the base rule.
template <class Sink>
void refine_subtri(const PanelFrame& pf, const Vec3& b0, const Vec3& b1,
                   const Vec3& b2, const std::vector<Vec3>& foci,
                   const TriRule& rule, const QuadParams& qp, int depth,
                   Sink&& sink) {
    if (depth < qp.max_depth && !foci.empty()) {
        const Vec3 A = pf.lift(b0), B = pf.lift(b1), C = pf.lift(b2);
        const double diam = std::sqrt(std::max(
            {(B - A).squaredNorm(), (C - B).squaredNorm(), (A - C).squaredNorm()}));
        double dist = std::numeric_limits<double>::infinity();
        for (const Vec3& fc : foci)
            dist = std::min(dist, point_triangle_distance(fc, A, B, C));
        if (dist < qp.eta * diam) {
            const Vec3 m01 = 0.5 * (b0 + b1), m12 = 0.5 * (b1 + b2),
                       m20 = 0.5 * (b2 + b0);
            refine_subtri(pf, b0, m01, m20, foci, rule, qp, depth + 1, sink);
            refine_subtri(pf, b1, m12, m01, foci, rule, qp, depth + 1, sink);
            refine_subtri(pf, b2, m20, m12, foci, rule, qp, depth + 1, sink);
            refine_subtri(pf, m01, m12, m20, foci, rule, qp, depth + 1, sink);
            return;
        }
    }
    rule_on_subtri(pf, b0, b1, b2, rule, sink);
}

// Splits panel t around the on-panel point with barycentric coordinates
// `bary` and integrates each piece by a Duffy rule with apex there.
template <class Sink>
void duffy_split_panel(const TriSurface& s, int t, const Vec3& bary,
                       const QuadParams& qp, Sink&& sink) {
    const PanelFrame pf(s, t);
    static const Vec3 corner[3] = {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
    const double panel_area =
        0.5 * (pf.c1 - pf.c0).cross(pf.c2 - pf.c0).norm();
    for (int k = 0; k < 3; ++k) {
        const Vec3& bi = corner[k];
        const Vec3& bj = corner[(k + 1) % 3];
        const Vec3 pa = pf.flat(bary), pi_ = pf.flat(bi), pj = pf.flat(bj);
        const double sub_area = 0.5 * (pi_ - pa).cross(pj - pa).norm();
        if (sub_area < 1e-13 * panel_area) continue; // apex on this edge
        duffy_on_subtri(pf, bary, bi, bj, qp.duffy_n, sink);
    }
}

} // namespace

double integrate_surface(const TriSurface& s, const std::vector<Vec3>& foci,
                         const std::function<double(const Vec3&, const Vec3&)>& f,
                         const QuadParams& qp) {
    const TriRule& rule = tri_rule(qp.degree);
    double sum = 0;
    const auto sink = [&](const Vec3& z, const Vec3& n, double w, const Vec3&) {
        sum += w * f(z, n);
    };
    for (int t = 0; t < s.nt(); ++t) {
        const PanelFrame pf(s, t);
        refine_subtri(pf, Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1), foci,
                      rule, qp, 0, sink);
    }
    return sum;
}

void panel_integrals(const TriSurface& s, int t, const Vec3& x, Vec3& single,
                     Eigen::Matrix3d& grad, Vec3& dlayer,
                     const QuadParams& qp) {
    single.setZero();
    grad.setZero();
    dlayer.setZero();
    const TriRule& rule = tri_rule(qp.degree);
    const PanelFrame pf(s, t);
    const auto sink = [&](const Vec3& z, const Vec3& n, double w, const Vec3& b) {
        const Vec3 d = x - z;
        const double r = d.norm();
        if (r < 1e-150) return;
        const double g = 1.0 / (4.0 * kPi * r);
        const Vec3 gg = -d * (g / (r * r)); // grad_G(x - z)
        for (int j = 0; j < 3; ++j) {
            single(j) += w * b(j) * g;
            grad.col(j) += w * b(j) * gg;
            // grad_G(z - x) . nu(z) = -grad_G(x - z) . nu(z) ... sign below
            dlayer(j) += w * b(j) * (-gg.dot(n));
        }
    };
    refine_subtri(pf, Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1), {x}, rule,
                  qp, 0, sink);
}

void panel_integrals_on_surface(const TriSurface& s, int t, const Vec3& x,
                                const Vec3& n_x,
                                const std::optional<Vec3>& bary_on_t,
                                Vec3& single, Vec3& flux,
                                const QuadParams& qp) {
    single.setZero();
    flux.setZero();
    const auto sink = [&](const Vec3& z, const Vec3& n, double w, const Vec3& b) {
        (void)n;
        const Vec3 d = x - z;
        const double r = d.norm();
        if (r < 1e-150) return;
        const double g = 1.0 / (4.0 * kPi * r);
        const Vec3 gg = -d * (g / (r * r)); // grad_G(x - z)
        const double fx = gg.dot(n_x);
        for (int j = 0; j < 3; ++j) {
            single(j) += w * b(j) * g;
            flux(j) += w * b(j) * fx;
        }
    };
    if (bary_on_t) {
        duffy_split_panel(s, t, *bary_on_t, qp, sink);
    } else {
        const TriRule& rule = tri_rule(qp.degree);
        const PanelFrame pf(s, t);
        refine_subtri(pf, Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1), {x},
                      rule, qp, 0, sink);
    }
}

namespace {

void check_clearance(const char* who, const Vec3& x, const Vec3& y,
                     const TriSurface& s, double eps_factor) {
    const double eps = eps_near(s, eps_factor);
    if (s.distance(x) < eps || s.distance(y) < eps)
        throw NearSurface(std::string(who) +
                          ": evaluation point closer than eps_near to the surface");
}

// lexicographic canonical order makes the integrals exactly symmetric
void canonicalize(Vec3& x, Vec3& y) {
    for (int k = 0; k < 3; ++k) {
        if (x(k) < y(k)) return;
        if (x(k) > y(k)) {
            std::swap(x, y);
            return;
        }
    }
}

} // namespace

double energy_integral_obstacle(const Vec3& x_in, const Vec3& y_in,
                                const TriSurface& obstacle, double eps_factor,
                                const QuadParams& qp) {
    Vec3 x = x_in, y = y_in;
    canonicalize(x, y);
    if (obstacle.contains(x) || obstacle.contains(y))
        throw Error("energy_integral_obstacle: points must lie outside the obstacle");
    check_clearance("energy_integral_obstacle", x, y, obstacle, eps_factor);
    return integrate_surface(
        obstacle, {x, y},
        [&](const Vec3& z, const Vec3& n) {
            return grad_G(z - x).dot(n) * G(z - y);
        },
        qp);
}

double energy_integral_exterior(const Vec3& x_in, const Vec3& y_in,
                                const TriSurface& outer, double eps_factor,
                                const QuadParams& qp) {
    Vec3 x = x_in, y = y_in;
    canonicalize(x, y);
    if (!outer.contains(x) || !outer.contains(y))
        throw Error("energy_integral_exterior: points must lie inside the domain");
    check_clearance("energy_integral_exterior", x, y, outer, eps_factor);
    return -integrate_surface(
        outer, {x, y},
        [&](const Vec3& z, const Vec3& n) {
            return grad_G(z - x).dot(n) * G(z - y);
        },
        qp);
}

} // namespace probekit

#include "probekit/bvp.hpp"

#include "probekit/potential.hpp"

#include <cmath>
#include <optional>
#include <sstream>

namespace probekit::bvp {

namespace {

std::optional<Vec3> corner_bary(const TriSurface& s, int t, int vertex) {
    for (int k = 0; k < 3; ++k)
        if (s.F(t, k) == vertex) {
            Vec3 e = Vec3::Zero();
            e(k) = 1.0;
            return e;
        }
    return std::nullopt;
}

// Collocation clearance for a right-hand-side source point.
void require_clearance(const TriSurface& s, const Vec3& x, double eps_factor,
                       const char* who) {
    const double d = s.distance(x);
    const double eps = eps_near(s, eps_factor);
    if (d < eps) {
        std::ostringstream msg;
        msg << who << ": source point at distance " << d
            << " violates the exclusion radius " << eps;
        throw NearSurface(msg.str());
    }
}

} // namespace

BoundaryTrace sample_trace(const TriSurface& s,
                           const std::function<double(const Vec3&)>& f,
                           TraceRole role) {
    BoundaryTrace tr;
    tr.surface = &s;
    tr.role = role;
    tr.values.resize(s.nv());
    for (int i = 0; i < s.nv(); ++i) tr.values(i) = f(s.V.row(i));
    return tr;
}

BemSystem build_system(const Domain& dom, const QuadParams& qp) {
    BemSystem sys;
    sys.dom = &dom;
    sys.qp = qp;

    const TriSurface& O = dom.outer;
    const TriSurface* D = dom.has_obstacle() ? &*dom.obstacle : nullptr;
    const int no = O.nv();
    const int nd = D ? D->nv() : 0;

    sys.mass_outer = assemble_mass_matrix(O);
    sys.mass_outer_llt.compute(sys.mass_outer);
    if (D) sys.mass_obstacle = assemble_mass_matrix(*D);

    MatX A = MatX::Zero(no + nd, no + nd);
    if (D) {
        sys.val_do = MatX::Zero(nd, no);
        sys.val_dd = MatX::Zero(nd, nd);
        for (auto& g : sys.grad_do) g = MatX::Zero(nd, no);
    }

    Vec3 sing, fl, dl;
    Eigen::Matrix3d gr;

    // Dirichlet rows: single-layer values at outer vertices.
    for (int i = 0; i < no; ++i) {
        const Vec3 x = O.V.row(i);
        const Vec3 nx = O.vertex_normal.row(i);
        for (int t = 0; t < O.nt(); ++t) {
            panel_integrals_on_surface(O, t, x, nx, corner_bary(O, t, i), sing,
                                       fl, qp);
            for (int k = 0; k < 3; ++k) A(i, O.F(t, k)) += sing(k);
        }
        for (int t = 0; D && t < D->nt(); ++t) {
            panel_integrals(*D, t, x, sing, gr, dl, qp);
            for (int k = 0; k < 3; ++k) A(i, no + D->F(t, k)) += sing(k);
        }
    }

    // Neumann rows: exterior-side flux at obstacle vertices. The same loops
    // fill the obstacle value maps and the gradient map of the outer layer.
    for (int i = 0; i < nd; ++i) {
        const Vec3 x = D->V.row(i);
        const Vec3 nx = D->vertex_normal.row(i);
        for (int t = 0; t < O.nt(); ++t) {
            panel_integrals(O, t, x, sing, gr, dl, qp);
            for (int k = 0; k < 3; ++k) {
                const int j = O.F(t, k);
                A(no + i, j) += gr.col(k).dot(nx);
                sys.val_do(i, j) += sing(k);
                for (int c = 0; c < 3; ++c) sys.grad_do[c](i, j) += gr(c, k);
            }
        }
        for (int t = 0; t < D->nt(); ++t) {
            panel_integrals_on_surface(*D, t, x, nx, corner_bary(*D, t, i),
                                       sing, fl, qp);
            for (int k = 0; k < 3; ++k) {
                const int j = D->F(t, k);
                A(no + i, no + j) += fl(k);
                sys.val_dd(i, j) += sing(k);
            }
        }
        A(no + i, no + i) -= 0.5; // exterior-side jump of the own layer
    }

    sys.op = std::move(A);
    sys.lu_outer.compute(sys.op.topLeftCorner(no, no));
    double rcond = sys.lu_outer.rcond();
    if (D) {
        sys.lu_mixed.compute(sys.op);
        rcond = sys.lu_mixed.rcond();
    }
    if (!(rcond > 1e-13)) {
        std::ostringstream msg;
        msg << "build_system: reciprocal condition estimate " << rcond;
        throw IllConditioned(msg.str());
    }
    sys.cond_estimate = 1.0 / rcond;

    // Flux map at outer quadrature nodes, interior-side jump included,
    // Galerkin-paired with the P1 test basis.
    sys.flux_oo = MatX::Zero(no, no);
    if (D) sys.flux_od = MatX::Zero(no, nd);
    VecX row_o(no), row_d(nd);
    for (int tg = 0; tg < O.nt(); ++tg) {
        for (int q = 0; q < O.q_per_tri; ++q) {
            const int node = tg * O.q_per_tri + q;
            const Vec3 x = O.qnode.row(node);
            const Vec3 nx = O.qnormal.row(node);
            const Vec3 shape = O.qshape.row(node);
            row_o.setZero();
            row_d.setZero();
            for (int t = 0; t < O.nt(); ++t) {
                const std::optional<Vec3> b =
                    (t == tg) ? std::optional<Vec3>(shape) : std::nullopt;
                panel_integrals_on_surface(O, t, x, nx, b, sing, fl, qp);
                for (int k = 0; k < 3; ++k) row_o(O.F(t, k)) += fl(k);
            }
            for (int k = 0; k < 3; ++k) row_o(O.F(tg, k)) += 0.5 * shape(k);
            for (int t = 0; D && t < D->nt(); ++t) {
                panel_integrals(*D, t, x, sing, gr, dl, qp);
                for (int k = 0; k < 3; ++k)
                    row_d(D->F(t, k)) += gr.col(k).dot(nx);
            }
            const double w = O.qweight(node);
            for (int k = 0; k < 3; ++k) {
                const int i = O.F(tg, k);
                sys.flux_oo.row(i) += w * shape(k) * row_o;
                if (D) sys.flux_od.row(i) += w * shape(k) * row_d;
            }
        }
    }

    return sys;
}

namespace {

HarmonicSolution finish_mixed(const BemSystem& sys, const VecX& f,
                              const VecX& h) {
    const int no = sys.nvo();
    const int nd = sys.nvd();
    VecX rhs(no + nd);
    rhs.head(no) = f;
    rhs.tail(nd) = h;
    HarmonicSolution sol;
    sol.sys = &sys;
    const VecX dens = sys.lu_mixed.solve(rhs);
    sol.density_outer = dens.head(no);
    sol.density_obstacle = dens.tail(nd);
    sol.dir_outer = f;
    sol.neu_obstacle = h;
    sol.neu_outer = sys.mass_outer_llt.solve(
        sys.flux_oo * sol.density_outer + sys.flux_od * sol.density_obstacle);
    sol.dir_obstacle =
        sys.val_do * sol.density_outer + sys.val_dd * sol.density_obstacle;
    const VecX residual = sys.op * dens - rhs;
    sol.bc_residual =
        residual.cwiseAbs().maxCoeff() / std::max(1.0, rhs.cwiseAbs().maxCoeff());
    return sol;
}

} // namespace

HarmonicSolution solve_mixed(const BemSystem& sys, const VecX& f_outer,
                             const VecX& h_obstacle) {
    if (!sys.has_obstacle())
        throw DomainMismatch(
            "solve_mixed: the system was built without an obstacle");
    if (f_outer.size() != sys.nvo() || h_obstacle.size() != sys.nvd())
        throw BasisMismatch("solve_mixed: trace length does not match the "
                            "surface vertex count");
    if (!f_outer.allFinite() || !h_obstacle.allFinite())
        throw Error("solve_mixed: non-finite boundary data");
    return finish_mixed(sys, f_outer, h_obstacle);
}

HarmonicSolution solve_mixed(const BemSystem& sys,
                             const BoundaryTrace& dirichlet_on_outer,
                             const BoundaryTrace& neumann_on_obstacle) {
    if (!sys.has_obstacle())
        throw DomainMismatch(
            "solve_mixed: the system was built without an obstacle");
    if (dirichlet_on_outer.surface != &sys.dom->outer ||
        neumann_on_obstacle.surface != &*sys.dom->obstacle)
        throw DomainMismatch("solve_mixed: traces live on other surfaces");
    if (dirichlet_on_outer.role != TraceRole::Dirichlet ||
        neumann_on_obstacle.role != TraceRole::Neumann)
        throw BasisMismatch("solve_mixed: trace roles are swapped");
    return solve_mixed(sys, dirichlet_on_outer.values,
                       neumann_on_obstacle.values);
}

HarmonicSolution solve_dirichlet(const BemSystem& sys, const VecX& f_outer) {
    if (f_outer.size() != sys.nvo())
        throw BasisMismatch("solve_dirichlet: trace length does not match the "
                            "surface vertex count");
    if (!f_outer.allFinite())
        throw Error("solve_dirichlet: non-finite boundary data");
    HarmonicSolution sol;
    sol.sys = &sys;
    sol.density_outer = sys.lu_outer.solve(f_outer);
    sol.dir_outer = f_outer;
    sol.neu_outer =
        sys.mass_outer_llt.solve(sys.flux_oo * sol.density_outer);
    const VecX residual =
        sys.op.topLeftCorner(sys.nvo(), sys.nvo()) * sol.density_outer -
        f_outer;
    sol.bc_residual = residual.cwiseAbs().maxCoeff() /
                      std::max(1.0, f_outer.cwiseAbs().maxCoeff());
    return sol;
}

HarmonicSolution reflected_solution(const BemSystem& sys, const Vec3& x,
                                    double eps_factor) {
    if (!sys.has_obstacle()) { // no obstacle reflects nothing
        HarmonicSolution sol = solve_dirichlet(sys, VecX::Zero(sys.nvo()));
        return sol;
    }
    const TriSurface& D = *sys.dom->obstacle;
    if (D.contains(x))
        throw Error("reflected_solution: source point inside the obstacle");
    require_clearance(D, x, eps_factor, "reflected_solution");
    VecX h(sys.nvd());
    for (int i = 0; i < sys.nvd(); ++i) {
        const Vec3 v = D.V.row(i);
        const Vec3 nv = D.vertex_normal.row(i);
        h(i) = -grad_G(v - x).dot(nv);
    }
    return finish_mixed(sys, VecX::Zero(sys.nvo()), h);
}

HarmonicSolution auxiliary_solution(const BemSystem& sys, const Vec3& x,
                                    double eps_factor) {
    const TriSurface& O = sys.dom->outer;
    if (!O.contains(x))
        throw Error("auxiliary_solution: source point outside the domain");
    require_clearance(O, x, eps_factor, "auxiliary_solution");
    VecX f(sys.nvo());
    for (int i = 0; i < sys.nvo(); ++i) f(i) = G(Vec3(O.V.row(i)) - x);
    if (!sys.has_obstacle()) return solve_dirichlet(sys, f);
    return finish_mixed(sys, f, VecX::Zero(sys.nvd()));
}

HarmonicSolution third_solution(const BemSystem& sys, const Vec3& x,
                                double eps_factor) {
    const TriSurface& O = sys.dom->outer;
    if (!O.contains(x))
        throw Error("third_solution: source point outside the domain");
    require_clearance(O, x, eps_factor, "third_solution");
    VecX f(sys.nvo());
    for (int i = 0; i < sys.nvo(); ++i) f(i) = G(Vec3(O.V.row(i)) - x);
    if (!sys.has_obstacle()) return solve_dirichlet(sys, f);
    const TriSurface& D = *sys.dom->obstacle;
    if (D.contains(x))
        throw Error("third_solution: source point inside the obstacle");
    require_clearance(D, x, eps_factor, "third_solution");
    VecX h(sys.nvd());
    for (int i = 0; i < sys.nvd(); ++i) {
        const Vec3 v = D.V.row(i);
        const Vec3 nv = D.vertex_normal.row(i);
        h(i) = -grad_G(v - x).dot(nv);
    }
    return finish_mixed(sys, f, h);
}

HarmonicSolution green_regular(const BemSystem& sys, const Vec3& x,
                               double eps_factor) {
    const TriSurface& O = sys.dom->outer;
    if (!O.contains(x))
        throw Error("green_regular: source point outside the domain");
    require_clearance(O, x, eps_factor, "green_regular");
    VecX f(sys.nvo());
    for (int i = 0; i < sys.nvo(); ++i) f(i) = -G(Vec3(O.V.row(i)) - x);
    return solve_dirichlet(sys, f);
}

HarmonicSolution star_reflected(const BemSystem& sys, const Vec3& x,
                                double eps_factor) {
    if (!sys.has_obstacle()) {
        HarmonicSolution sol = solve_dirichlet(sys, VecX::Zero(sys.nvo()));
        return sol;
    }
    const TriSurface& D = *sys.dom->obstacle;
    if (D.contains(x))
        throw Error("star_reflected: source point inside the obstacle");
    require_clearance(D, x, eps_factor, "star_reflected");
    require_clearance(sys.dom->outer, x, eps_factor, "star_reflected");
    const HarmonicSolution R = green_regular(sys, x, eps_factor);
    VecX h(sys.nvd());
    for (int i = 0; i < sys.nvd(); ++i) {
        const Vec3 v = D.V.row(i);
        const Vec3 nv = D.vertex_normal.row(i);
        Vec3 gradR;
        for (int c = 0; c < 3; ++c)
            gradR(c) = sys.grad_do[c].row(i).dot(R.density_outer);
        h(i) = -(grad_G(v - x) + gradR).dot(nv);
    }
    return finish_mixed(sys, VecX::Zero(sys.nvo()), h);
}

namespace {

void require_evaluable(const HarmonicSolution& sol, const Vec3& y,
                       double eps_factor) {
    const Domain& dom = *sol.sys->dom;
    if (!dom.outer.contains(y))
        throw Error("eval: point outside the domain");
    const double d_o = dom.outer.distance(y);
    if (d_o < eps_near(dom.outer, eps_factor)) {
        std::ostringstream msg;
        msg << "eval: point at distance " << d_o
            << " from the outer surface violates the exclusion radius "
            << eps_near(dom.outer, eps_factor);
        throw NearSurface(msg.str());
    }
    if (sol.whole_domain() || !dom.has_obstacle()) return;
    if (dom.obstacle->contains(y))
        throw Error("eval: point inside the obstacle");
    const double d_d = dom.obstacle->distance(y);
    if (d_d < eps_near(*dom.obstacle, eps_factor)) {
        std::ostringstream msg;
        msg << "eval: point at distance " << d_d
            << " from the obstacle violates the exclusion radius "
            << eps_near(*dom.obstacle, eps_factor);
        throw NearSurface(msg.str());
    }
}

} // namespace

double HarmonicSolution::eval(const Vec3& y, double eps_factor) const {
    require_evaluable(*this, y, eps_factor);
    const Domain& dom = *sys->dom;
    Vec3 sing, dl;
    Eigen::Matrix3d gr;
    double u = 0;
    for (int t = 0; t < dom.outer.nt(); ++t) {
        panel_integrals(dom.outer, t, y, sing, gr, dl, sys->qp);
        for (int k = 0; k < 3; ++k)
            u += sing(k) * density_outer(dom.outer.F(t, k));
    }
    if (!whole_domain()) {
        const TriSurface& D = *dom.obstacle;
        for (int t = 0; t < D.nt(); ++t) {
            panel_integrals(D, t, y, sing, gr, dl, sys->qp);
            for (int k = 0; k < 3; ++k)
                u += sing(k) * density_obstacle(D.F(t, k));
        }
    }
    return u;
}

Vec3 HarmonicSolution::grad(const Vec3& y, double eps_factor) const {
    require_evaluable(*this, y, eps_factor);
    const Domain& dom = *sys->dom;
    Vec3 sing, dl;
    Eigen::Matrix3d gr;
    Vec3 g = Vec3::Zero();
    for (int t = 0; t < dom.outer.nt(); ++t) {
        panel_integrals(dom.outer, t, y, sing, gr, dl, sys->qp);
        for (int k = 0; k < 3; ++k)
            g += gr.col(k) * density_outer(dom.outer.F(t, k));
    }
    if (!whole_domain()) {
        const TriSurface& D = *dom.obstacle;
        for (int t = 0; t < D.nt(); ++t) {
            panel_integrals(D, t, y, sing, gr, dl, sys->qp);
            for (int k = 0; k < 3; ++k)
                g += gr.col(k) * density_obstacle(D.F(t, k));
        }
    }
    return g;
}

double green_Omega(const HarmonicSolution& R_x, const Vec3& y, const Vec3& x,
                   double eps_factor) {
    return G(y - x) + R_x.eval(y, eps_factor);
}

} // namespace probekit::bvp

#include "probekit/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace probekit::oracle {

namespace {

constexpr double kPi = std::numbers::pi;

// Dirichlet trace coefficient of the point-source kernel on the outer sphere.
double source_trace_outer(double R0, double rx, int l) {
    return std::pow(rx, l) / std::pow(R0, l + 1) / (4.0 * kPi);
}

// radial derivative of the kernel on the obstacle sphere (R1 < rx)
double source_flux_obstacle(double R1, double rx, int l) {
    if (l == 0) return 0.0;
    return l * std::pow(R1, l - 1) / std::pow(rx, l + 1) / (4.0 * kPi);
}

// interior expansion coefficient of the ball reflection (pure a_l field)
double ball_reflection_coeff(double R0, double rx, int l) {
    return -std::pow(rx, l) / std::pow(R0, 2 * l + 1) / (4.0 * kPi);
}

// a_l r^l + b_l r^{-l-1} and its radial derivative, guarding vanished modes
double mode_value(double a, double b, double r, int l) {
    double v = 0;
    if (a != 0.0) v += a * std::pow(r, l);
    if (b != 0.0) v += b * std::pow(r, -l - 1);
    return v;
}

double mode_slope(double a, double b, double r, int l) {
    double v = 0;
    if (a != 0.0 && l > 0) v += l * a * std::pow(r, l - 1);
    if (b != 0.0) v -= (l + 1) * b * std::pow(r, -l - 2);
    return v;
}

// solves [value at R0; radial slope at R1] = [dirich; neum]
void solve_mode(double R0, double R1, int l, double dirich, double neum,
                double& a, double& b) {
    const double A11 = std::pow(R0, l);
    const double A12 = std::pow(R0, -l - 1);
    const double A21 = l * std::pow(R1, l - 1);
    const double A22 = -(l + 1) * std::pow(R1, -l - 2);
    const double det = A11 * A22 - A12 * A21;
    a = (dirich * A22 - A12 * neum) / det;
    b = (A11 * neum - dirich * A21) / det;
}

// geometric decay ratio of the field's eval series at radius r
double eval_ratio(const ModalSolution& s, Field f, double r) {
    const double rx = s.x.norm();
    const double q_in = rx * r / (s.R0 * s.R0);       // a-branch, source image
    const double q_out = s.R1 * s.R1 / (rx * r);      // b-branch, obstacle
    switch (f) {
        case Field::Auxiliary:
        case Field::GreenRegular: return q_in;
        case Field::Reflected:
        case Field::StarReflected: return std::max(q_out, q_in * q_out);
        case Field::Third: return std::max(q_in, q_out);
    }
    return std::max(q_in, q_out);
}

} // namespace

VecX legendre_all(int L, double t) {
    VecX p(L + 1);
    p(0) = 1.0;
    if (L >= 1) p(1) = t;
    for (int l = 2; l <= L; ++l)
        p(l) = ((2 * l - 1) * t * p(l - 1) - (l - 1) * p(l - 2)) / l;
    return p;
}

const MatX& ModalSolution::coeffs(Field f) const {
    switch (f) {
        case Field::Reflected: return reflected;
        case Field::Auxiliary: return auxiliary;
        case Field::Third: return third;
        case Field::GreenRegular: return green_regular;
        case Field::StarReflected: return star_reflected;
    }
    throw Error("ModalSolution::coeffs: unknown field");
}

ModalSolution oracle_solve(double R0, double R1, const Vec3& x, int L,
                           double tail_tol) {
    const double rx = x.norm();
    if (!(0 < R1 && R1 < rx && rx < R0))
        throw Error("oracle_solve: source must satisfy 0 < R1 < |x| < R0");
    if (L < 1) throw Error("oracle_solve: L must be >= 1");

    ModalSolution s;
    s.R0 = R0;
    s.R1 = R1;
    s.x = x;
    s.L = L;
    s.tail_tol = tail_tol;
    s.reflected.setZero(L + 1, 2);
    s.auxiliary.setZero(L + 1, 2);
    s.third.setZero(L + 1, 2);
    s.green_regular.setZero(L + 1, 2);
    s.star_reflected.setZero(L + 1, 2);

    for (int l = 0; l <= L; ++l) {
        const double g0 = source_trace_outer(R0, rx, l);
        const double gp = source_flux_obstacle(R1, rx, l);
        const double c = ball_reflection_coeff(R0, rx, l);
        double a, b;
        solve_mode(R0, R1, l, 0.0, -gp, a, b);
        s.reflected.row(l) << a, b;
        solve_mode(R0, R1, l, g0, 0.0, a, b);
        s.auxiliary.row(l) << a, b;
        solve_mode(R0, R1, l, g0, -gp, a, b);
        s.third.row(l) << a, b;
        s.green_regular.row(l) << c, 0.0;
        const double refl_slope = (l == 0) ? 0.0 : c * l * std::pow(R1, l - 1);
        solve_mode(R0, R1, l, 0.0, -gp - refl_slope, a, b);
        s.star_reflected.row(l) << a, b;
    }
    return s;
}

namespace {

double series_eval(const ModalSolution& s, Field f, const Vec3& y, bool slope) {
    const MatX& c = s.coeffs(f);
    const double ry = y.norm();
    const double lo = (f == Field::GreenRegular) ? 0.0 : s.R1 * (1 - 1e-9);
    if (ry < lo || ry > s.R0 * (1 + 1e-9))
        throw Error("ModalSolution::eval: point outside the expansion region");

    if (ry == 0.0) return slope ? 0.0 : c(0, 0); // only the constant survives

    const double ct =
        std::clamp(s.x.normalized().dot(y.normalized()), -1.0, 1.0);
    const VecX P = legendre_all(s.L, ct);
    double sum = 0, last = 0, peak = 0;
    for (int l = 0; l <= s.L; ++l) {
        const double amp = slope ? mode_slope(c(l, 0), c(l, 1), ry, l)
                                 : mode_value(c(l, 0), c(l, 1), ry, l);
        sum += amp * P(l);
        last = std::abs(amp);
        peak = std::max(peak, last);
    }
    const double q = eval_ratio(s, f, ry);
    const double scale = std::max(std::abs(sum), peak);
    if (q >= 1.0)
        throw TailTooLarge("ModalSolution::eval: series does not decay at this point");
    const double tail = last * q / (1.0 - q);
    if (scale > 0 && tail > s.tail_tol * scale)
        throw TailTooLarge("ModalSolution::eval: truncation tail above tolerance; raise L");
    return sum;
}

} // namespace

double ModalSolution::eval(Field f, const Vec3& y) const {
    return series_eval(*this, f, y, false);
}

double ModalSolution::radial_derivative(Field f, const Vec3& y) const {
    return series_eval(*this, f, y, true);
}

double obstacle_energy_series(double R1, const Vec3& x, const Vec3& y, int L) {
    const double rx = x.norm(), ry = y.norm();
    if (rx <= R1 || ry <= R1)
        throw Error("obstacle_energy_series: sources must lie outside the obstacle");
    const double ct = std::clamp(x.normalized().dot(y.normalized()), -1.0, 1.0);
    const VecX P = legendre_all(L, ct);
    double sum = 0;
    for (int l = 1; l <= L; ++l) {
        sum += l / (2.0 * l + 1.0) * std::pow(R1, 2 * l + 1) /
               std::pow(rx * ry, l + 1) * P(l);
    }
    return sum / (4.0 * kPi);
}

double exterior_energy_series(double R0, const Vec3& x, const Vec3& y, int L) {
    const double rx = x.norm(), ry = y.norm();
    if (rx >= R0 || ry >= R0)
        throw Error("exterior_energy_series: sources must lie inside the ball");
    double ct = 0.0;
    if (rx > 0 && ry > 0)
        ct = std::clamp(x.normalized().dot(y.normalized()), -1.0, 1.0);
    const VecX P = legendre_all(L, ct);
    double sum = 0;
    for (int l = 0; l <= L; ++l) {
        sum += (l + 1) / (2.0 * l + 1.0) * std::pow(rx * ry, l) /
               std::pow(R0, 2 * l + 1) * P(l);
    }
    return sum / (4.0 * kPi);
}

namespace {

// int_{|z|=R} A (dB/dr) dS for axially reduced fields around axes x and y
double sphere_pairing(const MatX& ca, const MatX& cb, double R, double ct,
                      int L) {
    const VecX P = legendre_all(L, ct);
    double sum = 0;
    for (int l = 0; l <= L; ++l) {
        const double A = mode_value(ca(l, 0), ca(l, 1), R, l);
        const double Bp = mode_slope(cb(l, 0), cb(l, 1), R, l);
        sum += A * Bp * R * R * 4.0 * kPi / (2.0 * l + 1.0) * P(l);
    }
    return sum;
}

} // namespace

double shell_cross_energy(const ModalSolution& sx, Field fx,
                          const ModalSolution& sy, Field fy) {
    if (sx.R0 != sy.R0 || sx.R1 != sy.R1)
        throw DomainMismatch("shell_cross_energy: solutions use different radii");
    const int L = std::min(sx.L, sy.L);
    const double ct =
        std::clamp(sx.x.normalized().dot(sy.x.normalized()), -1.0, 1.0);
    const MatX& ca = sx.coeffs(fx);
    const MatX& cb = sy.coeffs(fy);
    return sphere_pairing(ca, cb, sx.R0, ct, L) -
           sphere_pairing(ca, cb, sx.R1, ct, L);
}

double lifted_probe(const ModalSolution& sx, const ModalSolution& sy) {
    const int L = std::min(sx.L, sy.L);
    return shell_cross_energy(sx, Field::Reflected, sy, Field::Reflected) +
           obstacle_energy_series(sx.R1, sx.x, sy.x, L);
}

double lifted_exterior(const ModalSolution& sx, const ModalSolution& sy) {
    const int L = std::min(sx.L, sy.L);
    return shell_cross_energy(sx, Field::Auxiliary, sy, Field::Auxiliary) +
           exterior_energy_series(sx.R0, sx.x, sy.x, L);
}

OracleIndicators oracle_indicators(const ModalSolution& s) {
    OracleIndicators out;
    out.shell_energy_reflected =
        shell_cross_energy(s, Field::Reflected, s, Field::Reflected);
    out.shell_energy_auxiliary =
        shell_cross_energy(s, Field::Auxiliary, s, Field::Auxiliary);
    out.obstacle_energy = obstacle_energy_series(s.R1, s.x, s.x, s.L);
    out.exterior_energy = exterior_energy_series(s.R0, s.x, s.x, s.L);
    out.I = out.shell_energy_reflected + out.obstacle_energy;
    out.I1 = out.shell_energy_auxiliary + out.exterior_energy;
    out.w_xx = s.eval(Field::Reflected, s.x);
    out.w1_xx = s.eval(Field::Auxiliary, s.x);
    out.W_xx = s.eval(Field::Third, s.x);

    // star indicator: shell energy plus the ball-Green source energy in D,
    // expanded as kernel + 2 cross + smooth reflection parts
    const double rx = s.x.norm();
    double cross = 0, smooth = 0;
    for (int l = 1; l <= s.L; ++l) {
        const double c = s.green_regular(l, 0);
        cross += l / (2.0 * l + 1.0) * c * std::pow(s.R1, 2 * l + 1) /
                 std::pow(rx, l + 1);
        smooth += c * c * l * std::pow(s.R1, 2 * l + 1) * 4.0 * kPi /
                  (2.0 * l + 1.0);
    }
    out.I_star =
        shell_cross_energy(s, Field::StarReflected, s, Field::StarReflected) +
        out.obstacle_energy + 2.0 * cross + smooth;

    // worst geometric tail among the assembled series, relative
    const double q = std::max(eval_ratio(s, Field::Third, rx),
                              std::max(s.R1 * s.R1 / (rx * rx),
                                       rx * rx / (s.R0 * s.R0)));
    const double terms[] = {out.I, out.I1, out.W_xx, out.I_star};
    double scale = 0;
    for (double t : terms) scale = std::max(scale, std::abs(t));
    out.tail_bound = std::pow(q, s.L) * q / (1.0 - q);
    if (out.tail_bound > s.tail_tol * std::max(scale, 1e-300) * 10)
        throw TailTooLarge("oracle_indicators: truncation tail above tolerance; raise L");
    return out;
}

double max_bc_residual(const ModalSolution& s) {
    const double rx = s.x.norm();
    double worst = 0;
    for (int l = 0; l <= s.L; ++l) {
        const double g0 = source_trace_outer(s.R0, rx, l);
        const double gp = source_flux_obstacle(s.R1, rx, l);
        const double c = ball_reflection_coeff(s.R0, rx, l);
        const double refl_slope = (l == 0) ? 0.0 : c * l * std::pow(s.R1, l - 1);

        struct Row {
            const MatX* coef;
            double dirich, neum;
        } rows[] = {
            {&s.reflected, 0.0, -gp},
            {&s.auxiliary, g0, 0.0},
            {&s.third, g0, -gp},
            {&s.star_reflected, 0.0, -gp - refl_slope},
        };
        for (const Row& r : rows) {
            const double a = (*r.coef)(l, 0), b = (*r.coef)(l, 1);
            const double v0 = mode_value(a, b, s.R0, l);
            const double v1 = mode_slope(a, b, s.R1, l);
            const double s0 = std::max({std::abs(r.dirich), std::abs(a) * std::pow(s.R0, l),
                                        std::abs(b) * std::pow(s.R0, -l - 1), 1e-300});
            const double s1 = std::max({std::abs(r.neum),
                                        std::abs(l * a) * std::pow(s.R1, l - 1),
                                        std::abs((l + 1) * b) * std::pow(s.R1, -l - 2), 1e-300});
            worst = std::max(worst, std::abs(v0 - r.dirich) / s0);
            worst = std::max(worst, std::abs(v1 - r.neum) / s1);
        }
        // ball reflection: Dirichlet row only
        const double v = s.green_regular(l, 0) * std::pow(s.R0, l);
        worst = std::max(worst,
                         std::abs(v + g0) / std::max(std::abs(g0), 1e-300));
    }
    return worst;
}

double dtn_mode_eigenvalue(double R0, double R1, int l) {
    if (R1 <= 0.0) return l / R0;
    double a, b;
    solve_mode(R0, R1, l, 1.0, 0.0, a, b);
    return mode_slope(a, b, R0, l);
}

} // namespace probekit::oracle

#pragma once

// Semi-analytic reference solutions for the concentric-sphere configuration:
// outer ball of radius R0, obstacle ball of radius R1, both centered at the
// origin. Every boundary value problem reduces to independent 2x2 systems per
// Legendre mode, so these values serve as the independent oracle for the
// mesh-based solvers.

#include "probekit/errors.hpp"
#include "probekit/types.hpp"

namespace probekit::oracle {

enum class Field {
    Reflected,     // zero outer trace, obstacle flux cancels the point source
    Auxiliary,     // point-source outer trace, zero obstacle flux
    Third,         // sum of the two: point-source trace and cancelling flux
    GreenRegular,  // obstacle-free reflection making the ball Green function
    StarReflected, // like Reflected but sourced by the ball Green function
};

struct ModalSolution {
    double R0 = 1.0;
    double R1 = 0.3;
    Vec3 x = Vec3::Zero(); // source point, R1 < |x| < R0
    int L = 40;
    double tail_tol = 1e-8;

    // (L+1) x 2 coefficient tables [a_l, b_l] of a_l r^l + b_l r^{-l-1};
    // mode amplitudes along the axis through x (azimuthal reduction).
    MatX reflected, auxiliary, third, green_regular, star_reflected;

    const MatX& coeffs(Field f) const;

    // value / radial derivative at y; throws TailTooLarge when the geometric
    // tail bound at y exceeds tail_tol relative to the value scale
    double eval(Field f, const Vec3& y) const;
    double radial_derivative(Field f, const Vec3& y) const;
};

// Solves all five fields modewise. Requires 0 < R1 < |x| < R0 and L >= 1.
ModalSolution oracle_solve(double R0, double R1, const Vec3& x, int L,
                           double tail_tol = 1e-8);

struct OracleIndicators {
    double I = 0;      // shell energy of Reflected + source energy inside D
    double I1 = 0;     // shell energy of Auxiliary + source energy outside
    double W_xx = 0;   // Third evaluated at the source
    double I_star = 0; // star shell energy + ball-Green energy inside D
    double w_xx = 0;   // Reflected at the source
    double w1_xx = 0;  // Auxiliary at the source

    // components, exposed for cross-validation
    double shell_energy_reflected = 0;
    double shell_energy_auxiliary = 0;
    double obstacle_energy = 0; // int_D |grad G_x|^2
    double exterior_energy = 0; // int over the complement of the ball
    double tail_bound = 0;      // worst relative tail among the series
};

OracleIndicators oracle_indicators(const ModalSolution& sol);

// Pair energies of two point sources (series in the angle between x and y):
//   int_D grad G_x . grad G_y dz
double obstacle_energy_series(double R1, const Vec3& x, const Vec3& y, int L);
//   int_{|z|>R0} grad G_x . grad G_y dz
double exterior_energy_series(double R0, const Vec3& x, const Vec3& y, int L);

// Shell cross energy int over the shell of grad A . grad B for fields of two
// solutions sharing the same radii (sources may differ).
double shell_cross_energy(const ModalSolution& sx, Field fx,
                          const ModalSolution& sy, Field fy);

// Lifted two-point indicators on the oracle side.
double lifted_probe(const ModalSolution& sx, const ModalSolution& sy);
double lifted_exterior(const ModalSolution& sx, const ModalSolution& sy);

// Max relative residual of the per-mode boundary-condition systems; the
// construction should keep this at roundoff (< 1e-12).
double max_bc_residual(const ModalSolution& sol);

// Dirichlet-to-Neumann eigenvalue on the outer sphere for mode l; R1 = 0
// gives the obstacle-free value l / R0.
double dtn_mode_eigenvalue(double R0, double R1, int l);

// P_0..P_L at t (three-term recurrence), |t| <= 1.
VecX legendre_all(int L, double t);

} // namespace probekit::oracle

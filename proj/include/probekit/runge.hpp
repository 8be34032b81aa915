#pragma once

#include <string>
#include <vector>

#include "probekit/bvp.hpp"
#include "probekit/geometry.hpp"

namespace probekit::runge {

// Stage schedule for the point-source approximants of G(. - tip) away from
// the needle. The three vectors share one length (the stage count, >= 3);
// tube radii and regularization weights decrease strictly.
struct NeedleSequenceConfig {
    std::vector<int> poles_per_stage;
    std::vector<double> tube_radius;
    std::vector<double> regularization;
    int matching_density = 4; // matching samples per pole
    bool strict = false;      // escalate fit stagnation to an error
};

// Canonical schedule with n_max stages: N_n = 50 + 50 n,
// delta_n = 0.2 diam 2^-n, alpha_n = 1e-2 4^-n (geometric domain diameter).
NeedleSequenceConfig default_needle_config(const Domain& dom, int n_max = 5);

// Stage-wise approximants v_n of G(. - tip) on the complement of the open
// delta_n-tube around the needle. Each v_n combines point sources strictly
// outside the closed domain: a cluster on the exterior continuation of the
// needle beyond its entry point plus a proxy sphere enclosing the domain.
// fit_error[n] is the relative matching residual of stage n.
struct NeedleSequence {
    const Domain* dom = nullptr;
    Needle needle;
    NeedleSequenceConfig config;
    std::vector<Points> poles;
    std::vector<VecX> coeffs;
    std::vector<double> fit_error;
    bool stagnated = false;

    // optional regular-part correction (see corrected_sequence)
    bool corrected = false;
    bvp::HarmonicSolution correction;

    int stages() const { return static_cast<int>(poles.size()); }
    double eval(int n, const Vec3& y, double eps_factor = 2.0) const;
    Vec3 grad(int n, const Vec3& y, double eps_factor = 2.0) const;
    VecX trace_outer(int n) const; // nodal trace on the outer surface
};

// Builds the sequence; fit stagnation sets the flag (or throws FitStagnation
// under config.strict), a continuation segment too short for the source
// cluster throws PolePlacementFailure.
NeedleSequence build_needle_sequence(const Domain& dom, const Needle& needle,
                                     const NeedleSequenceConfig& config);
NeedleSequence build_needle_sequence(const Domain& dom, const Needle& needle);

// Attaches the regular part of the domain Green function at the needle tip,
// so stage evaluations produce v_n + R_x. The correction must be a
// whole-domain solution on the same outer boundary for the same source
// point; anything else throws DomainMismatch.
NeedleSequence corrected_sequence(const NeedleSequence& seq,
                                  const bvp::HarmonicSolution& R_x);

// G_n(y) = G(y - tip) - v_n(y): harmonic away from the tip, vanishing on the
// boundary in the corrected case. Evaluation at the tip throws SingularPoint.
struct CarlemanSequence {
    const NeedleSequence* seq = nullptr;

    int stages() const { return seq->stages(); }
    double eval(int n, const Vec3& y) const;
    Vec3 grad(int n, const Vec3& y) const;
};

CarlemanSequence carleman(const NeedleSequence& seq);

// Cache format: PROBEKIT-NSEQ 1 header, outer-mesh fingerprint, needle
// polyline, stage schedule, then per-stage poles and coefficients. The
// correction is not stored; reattach it after loading.
void save_needle_sequence(const std::string& path, const NeedleSequence& seq);
NeedleSequence load_needle_sequence(const std::string& path, const Domain& dom);

} // namespace probekit::runge

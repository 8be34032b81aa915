#include "probekit/runge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <numbers>

namespace probekit::runge {

namespace {

constexpr double kGold = 2.39996322972865332; // golden angle

double circumradius(const TriSurface& s) {
    double r = 0;
    for (int i = 0; i < s.nv(); ++i)
        r = std::max(r, (Vec3(s.V.row(i)) - s.centroid).norm());
    return r;
}

double point_needle_distance(const Vec3& p, const Needle& needle) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i + 1 < needle.points.rows(); ++i) {
        const Vec3 a = needle.points.row(i), b = needle.points.row(i + 1);
        const Vec3 ab = b - a;
        const double t = std::clamp(ab.dot(p - a) / ab.squaredNorm(), 0.0, 1.0);
        best = std::min(best, (p - (a + t * ab)).norm());
    }
    return best;
}

void orthonormal_frame(const Vec3& d, Vec3& e1, Vec3& e2) {
    const Vec3 seed = std::abs(d.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    e1 = d.cross(seed).normalized();
    e2 = d.cross(e1);
}

// needle direction at arc-length t measured backward from the tip
Vec3 needle_direction_at(const Needle& needle, double t) {
    const int m = static_cast<int>(needle.points.rows());
    for (int i = m - 1; i > 0; --i) {
        const Vec3 a = needle.points.row(i), b = needle.points.row(i - 1);
        const double len = (b - a).norm();
        if (t <= len || i == 1) return (b - a) / len;
        t -= len;
    }
    return (Vec3(needle.points.row(0)) - Vec3(needle.points.row(1))).normalized();
}

void validate_config(const NeedleSequenceConfig& cfg) {
    const size_t m = cfg.tube_radius.size();
    if (m < 3) throw Error("needle schedule needs at least 3 stages");
    if (cfg.poles_per_stage.size() != m || cfg.regularization.size() != m)
        throw Error("needle schedule vectors must share one length");
    if (cfg.matching_density < 1)
        throw Error("matching density must be at least 1 sample per pole");
    for (size_t i = 0; i < m; ++i) {
        if (!(cfg.tube_radius[i] > 0) || !(cfg.regularization[i] > 0))
            throw Error("tube radii and regularization weights must be positive");
        if (cfg.poles_per_stage[i] < 10)
            throw Error("each stage needs at least 10 poles");
        if (i > 0 && !(cfg.tube_radius[i] < cfg.tube_radius[i - 1]))
            throw Error("tube radii must decrease strictly");
        if (i > 0 && !(cfg.regularization[i] < cfg.regularization[i - 1]))
            throw Error("regularization weights must decrease strictly");
    }
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

} // namespace

NeedleSequenceConfig default_needle_config(const Domain& dom, int n_max) {
    if (n_max < 3) throw Error("needle schedule needs at least 3 stages");
    NeedleSequenceConfig cfg;
    const double diam = 2.0 * circumradius(dom.outer);
    for (int n = 1; n <= n_max; ++n) {
        cfg.poles_per_stage.push_back(50 + 50 * n);
        cfg.tube_radius.push_back(0.2 * diam * std::pow(2.0, -n));
        cfg.regularization.push_back(1e-2 * std::pow(4.0, -n));
    }
    return cfg;
}

NeedleSequence build_needle_sequence(const Domain& dom, const Needle& needle) {
    return build_needle_sequence(dom, needle, default_needle_config(dom));
}

NeedleSequence build_needle_sequence(const Domain& dom, const Needle& needle,
                                     const NeedleSequenceConfig& config) {
    validate_config(config);
    const TriSurface& outer = dom.outer;
    const double diam = 2.0 * circumradius(outer);
    const Vec3 x = needle.tip();
    const Vec3 entry = needle.entry();
    if (outer.distance(entry) > 4.0 * outer.surface_tol || !outer.contains(x))
        throw DomainMismatch("needle endpoints do not match this domain");

    // exterior continuation of the needle beyond its entry point
    const Vec3 u = (entry - Vec3(needle.points.row(1))).normalized();
    double window = 1.5 * diam;
    {
        const double step = 0.02 * diam;
        for (double s = step; s <= window; s += step) {
            if (outer.contains(entry + s * u)) {
                double lo = s - step, hi = s;
                for (int i = 0; i < 60; ++i) {
                    const double mid = 0.5 * (lo + hi);
                    (outer.contains(entry + mid * u) ? hi : lo) = mid;
                }
                window = 0.5 * (lo + hi);
                break;
            }
        }
    }

    const double proxy_radius = 1.5 * circumradius(outer);
    const double wg = 0.25 * diam; // gradient length scale in the H1-type rows

    NeedleSequence seq;
    seq.dom = &dom;
    seq.needle = needle;
    seq.config = config;

    const int n_stages = static_cast<int>(config.tube_radius.size());
    for (int n = 0; n < n_stages; ++n) {
        const int n_total = config.poles_per_stage[static_cast<size_t>(n)];
        const double delta = config.tube_radius[static_cast<size_t>(n)];
        const double alpha = config.regularization[static_cast<size_t>(n)];

        // source cluster on the continuation, geometric toward the entry.
        // Poles on the bare axis span only fields axisymmetric about the
        // continuation ray, which suffices for a needle aligned with the
        // local normal but starves generic needles of the transverse modes
        // the entry channel demands. Each station therefore carries an axis
        // pole plus a ring of four at 0.6 of its depth, rotated station to
        // station so consecutive rings interleave.
        const int n_ray = std::max(3, n_total / 3);
        const double s_min = std::max(0.5 * delta, 2.0 * outer.surface_tol);
        const double s_max = std::min(0.75 * diam, window - 0.02 * diam);
        if (!(s_max > 1.3 * s_min))
            throw PolePlacementFailure(
                "exterior continuation window [" + std::to_string(s_min) + ", " +
                std::to_string(s_max) + "] cannot hold the source cluster");
        std::vector<Vec3> poles;
        poles.reserve(static_cast<size_t>(n_total));
        const int n_station = n_ray / 5;
        if (n_station >= 3) {
            Vec3 re1, re2;
            orthonormal_frame(u, re1, re2);
            for (int j = 0; j < n_station; ++j) {
                const double f = double(j) / (n_station - 1);
                const double s = s_min * std::pow(s_max / s_min, f);
                const Vec3 axis = entry + s * u;
                if (!outer.contains(axis) &&
                    outer.distance(axis) > outer.surface_tol)
                    poles.push_back(axis);
                for (int q = 1; q < 5; ++q) {
                    const double th =
                        kGold * j + 0.5 * std::numbers::pi * q;
                    const Vec3 p = axis + 0.6 * s *
                                              (std::cos(th) * re1 +
                                               std::sin(th) * re2);
                    if (!outer.contains(p) &&
                        outer.distance(p) > outer.surface_tol)
                        poles.push_back(p);
                }
            }
        } else {
            for (int j = 0; j < n_ray; ++j) {
                const double f = n_ray > 1 ? double(j) / (n_ray - 1) : 0.0;
                const Vec3 p = entry + s_min * std::pow(s_max / s_min, f) * u;
                if (!outer.contains(p) && outer.distance(p) > outer.surface_tol)
                    poles.push_back(p);
            }
        }
        if (static_cast<int>(poles.size()) < 3)
            throw PolePlacementFailure(
                "needle continuation poles fall back inside the domain");

        const int n_proxy = n_total - static_cast<int>(poles.size());
        for (int k = 0; k < n_proxy; ++k) {
            const double z = 1.0 - 2.0 * (k + 0.5) / n_proxy;
            const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
            const double th = kGold * k;
            poles.push_back(outer.centroid +
                            proxy_radius *
                                Vec3(r * std::cos(th), r * std::sin(th), z));
        }

        // matching samples over the stage-n region (domain minus the open
        // delta-tube). Interior samples match values and gradients; boundary
        // samples match values only (an interior-harmonic approximant has
        // zero net flux, so its full boundary gradient cannot follow a
        // source inside the domain). The interior lattice is restricted to
        // a cone opening backward from the tip: that is the region a pole
        // basis on the exterior continuation reaches without resolving
        // sub-tube transverse scales. Samples hugging the tube wall or the
        // entry patch demand continuation depths beyond double precision
        // and destabilize the solve, so the tube-boundary rows (the end cap
        // around the tip) participate at token weight only and the outer
        // boundary keeps a fixed standoff collar around the tube.
        const Vec3 d_tip = needle_direction_at(needle, 0.0);
        const double collar = std::max(delta, 0.05 * diam);
        std::vector<Vec3> samples;
        std::vector<double> wmul;
        {
            // end cap of the delta-tube, token weight
            Vec3 e1, e2;
            orthonormal_frame(d_tip, e1, e2);
            samples.push_back(x - delta * d_tip);
            wmul.push_back(0.03);
            for (double phi : {115.0, 150.0}) {
                const double cp = std::cos(phi * std::numbers::pi / 180);
                const double sp = std::sin(phi * std::numbers::pi / 180);
                for (int k = 0; k < 8; ++k) {
                    const double th = 2 * std::numbers::pi * k / 8;
                    const Vec3 p =
                        x + delta * (cp * d_tip + sp * (std::cos(th) * e1 +
                                                        std::sin(th) * e2));
                    if (outer.contains(p) && outer.distance(p) > outer.surface_tol) {
                        samples.push_back(p);
                        wmul.push_back(0.03);
                    }
                }
            }
        }
        const size_t n_quarantined = samples.size();
        {
            const double h = diam / (3.0 * config.matching_density);
            const Vec3 lo = outer.centroid - 0.5 * diam * Vec3::Ones();
            const Vec3 hi = outer.centroid + 0.5 * diam * Vec3::Ones();
            double cos_cone = std::cos(40.0 * std::numbers::pi / 180.0);
            double keepout = 0.125 * diam;
            for (int attempt = 0; attempt < 2; ++attempt) {
                samples.resize(n_quarantined);
                wmul.resize(n_quarantined);
                for (double px = lo.x() + 0.5 * h; px < hi.x(); px += h)
                    for (double py = lo.y() + 0.5 * h; py < hi.y(); py += h)
                        for (double pz = lo.z() + 0.5 * h; pz < hi.z(); pz += h) {
                            const Vec3 p(px, py, pz);
                            const Vec3 dp = p - x;
                            const double r = dp.norm();
                            if (r < keepout || -dp.dot(d_tip) < cos_cone * r)
                                continue;
                            if (point_needle_distance(p, needle) <= delta) continue;
                            if (!outer.contains(p) ||
                                outer.distance(p) < 0.025 * diam)
                                continue;
                            samples.push_back(p);
                            wmul.push_back(1.0);
                        }
                if (2 * static_cast<int>(samples.size() - n_quarantined) >= n_total)
                    break;
                // cramped tip: widen the cone rather than fail the stage
                cos_cone = std::cos(75.0 * std::numbers::pi / 180.0);
                keepout = 0.05 * diam;
            }
        }
        std::vector<Vec3> boundary;
        {
            const int want = 300 * config.matching_density;
            const int rows = static_cast<int>(outer.qnode.rows());
            const int stride = std::max(1, rows / want);
            for (int r = 0; r < rows; r += stride) {
                const Vec3 p = outer.qnode.row(r);
                if (point_needle_distance(p, needle) > collar)
                    boundary.push_back(p);
            }
        }

        const int n_poles = static_cast<int>(poles.size());
        const int n_int = static_cast<int>(samples.size());
        const int n_bnd = static_cast<int>(boundary.size());
        if (n_int + n_bnd < n_poles)
            throw Error("matching sample budget below the pole count");

        // rows scaled by the local target magnitude: the residual norm is a
        // relative error, so the near-tip rows cannot drown the far field
        MatX A(4 * n_int + n_bnd, n_poles);
        VecX b(4 * n_int + n_bnd);
        for (int s = 0; s < n_int; ++s) {
            const Vec3& y = samples[static_cast<size_t>(s)];
            const double gv = G(y - x);
            const Vec3 gg = wg * grad_G(y - x);
            const double w =
                wmul[static_cast<size_t>(s)] / std::sqrt(gv * gv + gg.squaredNorm());
            b[4 * s] = w * gv;
            b.segment<3>(4 * s + 1) = w * gg;
            for (int k = 0; k < n_poles; ++k) {
                const Vec3 dy = y - poles[static_cast<size_t>(k)];
                A(4 * s, k) = w * G(dy);
                A.block<3, 1>(4 * s + 1, k) = (w * wg) * grad_G(dy);
            }
        }
        for (int s = 0; s < n_bnd; ++s) {
            const Vec3& y = boundary[static_cast<size_t>(s)];
            const double gv = G(y - x);
            const double w = 0.1 / std::abs(gv);
            b[4 * n_int + s] = w * gv;
            for (int k = 0; k < n_poles; ++k)
                A(4 * n_int + s, k) = w * G(y - Vec3(poles[static_cast<size_t>(k)]));
        }

        // alpha_n acts as a relative spectral cutoff: each stage keeps the
        // singular directions above max(alpha^3, staged floor), so the
        // shrinking schedule releases deeper basis modes stage by stage
        // while the floor keeps the solve clear of roundoff garbage
        const double cut = std::max(
            alpha * alpha * alpha,
            1e-10 * std::pow(2.0, static_cast<double>(n_stages - 1 - n)));
        Eigen::BDCSVD<MatX> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const VecX& sv = svd.singularValues();
        const VecX ub = svd.matrixU().transpose() * b;
        VecX c = VecX::Zero(n_poles);
        for (int i = 0; i < sv.size(); ++i)
            if (sv[i] > cut * sv[0]) c += (ub[i] / sv[i]) * svd.matrixV().col(i);

        // recorded discrepancy spans the full-weight samples only; the
        // quarantined cap rows are diagnostics, not matching targets
        const VecX r = A * c - b;
        double rn = r.tail(n_bnd).squaredNorm(), bn = b.tail(n_bnd).squaredNorm();
        for (int s = static_cast<int>(n_quarantined); s < n_int; ++s) {
            rn += r.segment<4>(4 * s).squaredNorm();
            bn += b.segment<4>(4 * s).squaredNorm();
        }
        seq.fit_error.push_back(std::sqrt(rn / bn));
        Points P(n_poles, 3);
        for (int k = 0; k < n_poles; ++k)
            P.row(k) = poles[static_cast<size_t>(k)];
        seq.poles.push_back(std::move(P));
        seq.coeffs.push_back(c);
    }

    for (int i = 0; i + 2 < n_stages; ++i)
        if (seq.fit_error[static_cast<size_t>(i + 1)] >=
                seq.fit_error[static_cast<size_t>(i)] &&
            seq.fit_error[static_cast<size_t>(i + 2)] >=
                seq.fit_error[static_cast<size_t>(i + 1)])
            seq.stagnated = true;
    if (seq.stagnated && config.strict) {
        std::string trace;
        for (double e : seq.fit_error) trace += " " + std::to_string(e);
        throw FitStagnation("stage fits stopped improving:" + trace);
    }
    return seq;
}

double NeedleSequence::eval(int n, const Vec3& y, double eps_factor) const {
    const Points& P = poles.at(static_cast<size_t>(n));
    const VecX& c = coeffs.at(static_cast<size_t>(n));
    double v = 0;
    for (int k = 0; k < P.rows(); ++k) v += c[k] * G(y - Vec3(P.row(k)));
    if (corrected) v += correction.eval(y, eps_factor);
    return v;
}

Vec3 NeedleSequence::grad(int n, const Vec3& y, double eps_factor) const {
    const Points& P = poles.at(static_cast<size_t>(n));
    const VecX& c = coeffs.at(static_cast<size_t>(n));
    Vec3 g = Vec3::Zero();
    for (int k = 0; k < P.rows(); ++k) g += c[k] * grad_G(y - Vec3(P.row(k)));
    if (corrected) g += correction.grad(y, eps_factor);
    return g;
}

VecX NeedleSequence::trace_outer(int n) const {
    const TriSurface& outer = dom->outer;
    const Points& P = poles.at(static_cast<size_t>(n));
    const VecX& c = coeffs.at(static_cast<size_t>(n));
    VecX tr = VecX::Zero(outer.nv());
    for (int i = 0; i < outer.nv(); ++i) {
        const Vec3 v = outer.V.row(i);
        double s = 0;
        for (int k = 0; k < P.rows(); ++k) s += c[k] * G(v - Vec3(P.row(k)));
        tr[i] = s;
    }
    if (corrected) tr += correction.dir_outer;
    return tr;
}

NeedleSequence corrected_sequence(const NeedleSequence& seq,
                                  const bvp::HarmonicSolution& R_x) {
    if (seq.corrected) throw Error("sequence already carries a correction");
    if (!R_x.whole_domain())
        throw DomainMismatch("correction must be a whole-domain regular part");
    const TriSurface& outer = seq.dom->outer;
    if (R_x.sys->dom != seq.dom &&
        mesh_fingerprint(R_x.sys->dom->outer) != mesh_fingerprint(outer))
        throw DomainMismatch("correction was solved on a different outer boundary");

    // the boundary trace of the regular part pins the source point
    const Vec3 x = seq.needle.tip();
    for (int i = 0; i < std::min(outer.nv(), 8); ++i) {
        const double want = -G(Vec3(outer.V.row(i)) - x);
        if (std::abs(R_x.dir_outer[i] - want) > 1e-8 * (1.0 + std::abs(want)))
            throw DomainMismatch("correction was solved for a different source point");
    }

    NeedleSequence out = seq;
    out.corrected = true;
    out.correction = R_x;
    return out;
}

double CarlemanSequence::eval(int n, const Vec3& y) const {
    const Vec3 dy = y - seq->needle.tip();
    if (dy.norm() < 1e-14)
        throw SingularPoint("Carleman evaluation at the needle tip");
    return G(dy) - seq->eval(n, y);
}

Vec3 CarlemanSequence::grad(int n, const Vec3& y) const {
    const Vec3 dy = y - seq->needle.tip();
    if (dy.norm() < 1e-14)
        throw SingularPoint("Carleman evaluation at the needle tip");
    return grad_G(dy) - seq->grad(n, y);
}

CarlemanSequence carleman(const NeedleSequence& seq) {
    return CarlemanSequence{&seq};
}

void save_needle_sequence(const std::string& path, const NeedleSequence& seq) {
    if (seq.corrected)
        throw Error("corrected sequences are not cacheable; save the base sequence");
    const std::string tmp = path + ".tmp";
    {
        std::unique_ptr<std::FILE, FileCloser> f(std::fopen(tmp.c_str(), "wb"));
        if (!f) throw Error("cannot open " + tmp + " for writing");
        std::fprintf(f.get(), "PROBEKIT-NSEQ 1\n%s\n",
                     mesh_fingerprint(seq.dom->outer).c_str());
        std::fprintf(f.get(), "%d\n",
                     static_cast<int>(seq.needle.points.rows()));
        for (int i = 0; i < seq.needle.points.rows(); ++i)
            std::fprintf(f.get(), "%.17g %.17g %.17g\n", seq.needle.points(i, 0),
                         seq.needle.points(i, 1), seq.needle.points(i, 2));
        std::fprintf(f.get(), "%d %d %d\n", seq.stages(),
                     seq.config.matching_density, seq.stagnated ? 1 : 0);
        for (int n = 0; n < seq.stages(); ++n) {
            const Points& P = seq.poles[static_cast<size_t>(n)];
            std::fprintf(f.get(), "%d %.17g %.17g %.17g\n",
                         static_cast<int>(P.rows()),
                         seq.config.tube_radius[static_cast<size_t>(n)],
                         seq.config.regularization[static_cast<size_t>(n)],
                         seq.fit_error[static_cast<size_t>(n)]);
            for (int k = 0; k < P.rows(); ++k)
                std::fprintf(f.get(), "%.17g %.17g %.17g %.17g\n", P(k, 0),
                             P(k, 1), P(k, 2),
                             seq.coeffs[static_cast<size_t>(n)][k]);
        }
        if (std::fflush(f.get()) != 0) throw Error("cannot flush " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

NeedleSequence load_needle_sequence(const std::string& path, const Domain& dom) {
    std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw FormatError("cannot open " + path);

    char magic[32] = {0};
    int version = 0;
    if (std::fscanf(f.get(), "%31s %d", magic, &version) != 2 ||
        std::strcmp(magic, "PROBEKIT-NSEQ") != 0)
        throw FormatError(path + ": missing PROBEKIT-NSEQ header");
    if (version != 1)
        throw FormatError(path + ": unsupported version " +
                          std::to_string(version));

    char fingerprint[128] = {0};
    if (std::fscanf(f.get(), "%127s", fingerprint) != 1)
        throw FormatError(path + ": truncated header");
    if (fingerprint != mesh_fingerprint(dom.outer))
        throw FingerprintMismatch(
            "cached sequence was built on a different outer mesh");

    int n_pts = 0;
    if (std::fscanf(f.get(), "%d", &n_pts) != 1 || n_pts < 2 || n_pts > 4096)
        throw FormatError(path + ": implausible needle point count");
    Points pts(n_pts, 3);
    for (int i = 0; i < n_pts; ++i) {
        double px, py, pz;
        if (std::fscanf(f.get(), "%lf %lf %lf", &px, &py, &pz) != 3)
            throw FormatError(path + ": truncated needle polyline");
        if (!std::isfinite(px) || !std::isfinite(py) || !std::isfinite(pz))
            throw FormatError(path + ": non-finite needle point");
        pts.row(i) << px, py, pz;
    }

    NeedleSequence seq;
    seq.dom = &dom;
    seq.needle = make_needle(dom, pts);

    int n_stages = 0, density = 0, stag = 0;
    if (std::fscanf(f.get(), "%d %d %d", &n_stages, &density, &stag) != 3)
        throw FormatError(path + ": truncated stage header");
    if (n_stages < 3 || n_stages > 64 || density < 1)
        throw FormatError(path + ": implausible stage header");
    seq.config.matching_density = density;
    seq.stagnated = stag != 0;

    for (int n = 0; n < n_stages; ++n) {
        int np = 0;
        double delta, alpha, err;
        if (std::fscanf(f.get(), "%d %lf %lf %lf", &np, &delta, &alpha, &err) != 4)
            throw FormatError(path + ": truncated stage header");
        if (np < 1 || np > 1000000 || !std::isfinite(delta) || !std::isfinite(err))
            throw FormatError(path + ": implausible stage header");
        seq.config.poles_per_stage.push_back(np);
        seq.config.tube_radius.push_back(delta);
        seq.config.regularization.push_back(alpha);
        seq.fit_error.push_back(err);
        Points P(np, 3);
        VecX c(np);
        for (int k = 0; k < np; ++k) {
            double px, py, pz, ck;
            if (std::fscanf(f.get(), "%lf %lf %lf %lf", &px, &py, &pz, &ck) != 4)
                throw FormatError(path + ": truncated pole block");
            if (!std::isfinite(px) || !std::isfinite(ck))
                throw FormatError(path + ": non-finite pole entry");
            P.row(k) << px, py, pz;
            c[k] = ck;
        }
        seq.poles.push_back(std::move(P));
        seq.coeffs.push_back(std::move(c));
    }
    return seq;
}

} // namespace probekit::runge

#include "probekit/dtn.hpp"

#include <bit>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <vector>

namespace probekit::dtn {

namespace {

// Neumann traces of the nodal-basis solves, all columns at once. The block
// solve is the same linear algebra as looping solve_mixed over basis vectors.
MatX nodal_neumann(const bvp::BemSystem& sys, bool use_obstacle) {
    const int no = sys.nvo();
    MatX neu;
    if (use_obstacle) {
        const int nd = sys.nvd();
        MatX rhs = MatX::Zero(no + nd, no);
        rhs.topLeftCorner(no, no).setIdentity();
        MatX dens = sys.lu_mixed.solve(rhs);
        neu = sys.flux_oo * dens.topRows(no) + sys.flux_od * dens.bottomRows(nd);
    } else {
        MatX dens = sys.lu_outer.solve(MatX::Identity(no, no));
        neu = sys.flux_oo * dens;
    }
    return sys.mass_outer_llt.solve(neu);
}

// The raw collocation operator is only approximately self-adjoint in the
// boundary pairing and annihilates constants only approximately, while the
// continuum operator has both properties exactly. Restore them structurally:
// symmetrize the tested flux form B = M Lambda in the pairing and project
// out the constant kernel on both sides. Quadratic forms f^T M Lambda f are
// unchanged by the symmetrization; the deflation removes only the spurious
// coupling to constants, which sits at the discretization-error scale.
void restore_structure(DtNMatrix& d, const Eigen::LLT<MatX>& mass_llt) {
    MatX b = d.mass * d.lambda;
    b = 0.5 * (b + b.transpose()).eval();
    const VecX a = d.mass * VecX::Ones(d.n()); // nodal areas
    const double total = a.sum();
    const VecX b1 = b * VecX::Ones(d.n());
    b.noalias() -= (1.0 / total) * b1 * a.transpose();
    const VecX left = b.transpose() * VecX::Ones(d.n());
    b.noalias() -= (1.0 / total) * a * left.transpose();
    d.lambda = mass_llt.solve(b);
}

DtNMatrix assemble(const bvp::BemSystem& sys, bool use_obstacle) {
    DtNMatrix out;
    out.lambda = nodal_neumann(sys, use_obstacle);
    out.mass = sys.mass_outer;
    out.provenance =
        use_obstacle ? Provenance::WithObstacle : Provenance::Background;
    out.fingerprint = mesh_fingerprint(sys.dom->outer);
    restore_structure(out, sys.mass_outer_llt);
    return out;
}

void require_compatible(const DtNMatrix& a, const DtNMatrix& b) {
    if (a.n() != b.n())
        throw BasisMismatch("operators live on bases of dimension " +
                            std::to_string(a.n()) + " and " +
                            std::to_string(b.n()));
    if (a.fingerprint != b.fingerprint)
        throw FingerprintMismatch("operators were assembled on different outer meshes");
}

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_matrix_text(std::FILE* f, const MatX& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            std::fprintf(f, j ? " %.17g" : "%.17g", m(i, j));
        std::fputc('\n', f);
    }
}

// Raw payload is little-endian IEEE doubles regardless of host order.
void write_matrix_raw(std::FILE* f, const MatX& m) {
    std::vector<double> row(static_cast<size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v = m(i, j);
            if constexpr (std::endian::native == std::endian::big) {
                auto bits = std::bit_cast<uint64_t>(v);
                bits = __builtin_bswap64(bits);
                v = std::bit_cast<double>(bits);
            }
            row[static_cast<size_t>(j)] = v;
        }
        if (std::fwrite(row.data(), sizeof(double), row.size(), f) != row.size())
            throw Error("short write to operator file");
    }
}

void read_matrix_text(std::FILE* f, MatX& m, const std::string& path) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v;
            if (std::fscanf(f, "%lf", &v) != 1)
                throw FormatError(path + ": truncated matrix block");
            if (!std::isfinite(v))
                throw FormatError(path + ": non-finite matrix entry");
            m(i, j) = v;
        }
}

void read_matrix_raw(std::FILE* f, MatX& m, const std::string& path) {
    std::vector<double> row(static_cast<size_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        if (std::fread(row.data(), sizeof(double), row.size(), f) != row.size())
            throw FormatError(path + ": truncated matrix block");
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            double v = row[static_cast<size_t>(j)];
            if constexpr (std::endian::native == std::endian::big) {
                auto bits = std::bit_cast<uint64_t>(v);
                bits = __builtin_bswap64(bits);
                v = std::bit_cast<double>(bits);
            }
            if (!std::isfinite(v))
                throw FormatError(path + ": non-finite matrix entry");
            m(i, j) = v;
        }
    }
}

} // namespace

DtNMatrix assemble_dtn(const bvp::BemSystem& sys) {
    return assemble(sys, sys.has_obstacle());
}

DtNMatrix restrict_dtn(const DtNMatrix& fine, const TriSurface& fine_outer,
                       const TriSurface& coarse_outer) {
    if (fine.fingerprint != mesh_fingerprint(fine_outer))
        throw FingerprintMismatch("operator was not assembled on the given fine mesh");
    if (!fine_outer.analytic || !coarse_outer.analytic)
        throw NestingViolation("restriction requires analytic-surface meshes");
    const int ntc = coarse_outer.nt(), nvc = coarse_outer.nv();
    const int ntf = fine_outer.nt(), nvf = fine_outer.nv();
    if (ntf != 4 * ntc ||
        (fine_outer.V.topRows(nvc) - coarse_outer.V).cwiseAbs().maxCoeff() >
            1e-12 * coarse_outer.diameter)
        throw NestingViolation("fine mesh is not the one-level refinement of the coarse mesh");

    const Vec3 center = coarse_outer.analytic->center;
    const Vec3 semi = coarse_outer.analytic->semi;

    // Cross mass C_ij = int phi^c_i phi^f_j over the common surface,
    // integrated on the fine quadrature. The coarse barycentric of a surface
    // point follows from inverting the scaled-radial panel lift, which is a
    // per-panel 3x3 solve in the unit-sphere preimage.
    MatX cross = MatX::Zero(nvc, nvf);
    std::vector<Eigen::PartialPivLU<Eigen::Matrix3d>> corner_lu;
    corner_lu.reserve(static_cast<size_t>(ntc));
    for (int t = 0; t < ntc; ++t) {
        Eigen::Matrix3d U;
        for (int k = 0; k < 3; ++k)
            U.col(k) = (Vec3(coarse_outer.V.row(coarse_outer.F(t, k))) - center)
                           .cwiseQuotient(semi)
                           .normalized();
        corner_lu.emplace_back(U);
    }
    const int q = fine_outer.q_per_tri;
    for (int ft = 0; ft < ntf; ++ft) {
        const int t = ft / 4;
        for (int r = 0; r < q; ++r) {
            const int row = ft * q + r;
            const Vec3 z = fine_outer.qnode.row(row);
            const Vec3 dir = ((z - center).cwiseQuotient(semi)).normalized();
            Vec3 b = corner_lu[static_cast<size_t>(t)].solve(dir);
            const double s = b.sum();
            if (!(s > 0))
                throw NestingViolation("fine quadrature node escapes its parent panel");
            b /= s;
            const double w = fine_outer.qweight(row);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    cross(coarse_outer.F(t, i), fine_outer.F(ft, j)) +=
                        w * b[i] * fine_outer.qshape(row, j);
        }
    }

    // B_c = R^T B_f R with R = M_f^{-1} C^T the fine-space projection of the
    // coarse hats; equals C Lambda_f M_f^{-1} C^T.
    Eigen::LLT<MatX> fine_llt(fine.mass);
    MatX r = fine_llt.solve(cross.transpose());
    MatX bc = cross * fine.lambda * r;

    DtNMatrix out;
    out.mass = assemble_mass_matrix(coarse_outer);
    Eigen::LLT<MatX> coarse_llt(out.mass);
    out.lambda = coarse_llt.solve(0.5 * (bc + bc.transpose()));
    out.provenance = fine.provenance;
    out.fingerprint = mesh_fingerprint(coarse_outer);
    return out;
}

DtNMatrix assemble_background_dtn(const bvp::BemSystem& sys) {
    return assemble(sys, false);
}

double symmetry_defect(const DtNMatrix& dtn) {
    MatX ml = dtn.mass * dtn.lambda;
    return (dtn.lambda.transpose() * dtn.mass - ml).norm() / ml.norm();
}

double constant_annihilation(const DtNMatrix& dtn) {
    return (dtn.lambda * VecX::Ones(dtn.n())).norm() / dtn.lambda.norm();
}

double pair(const DtNMatrix& dtn, const VecX& g, const VecX& h) {
    if (g.size() != dtn.n() || h.size() != dtn.n())
        throw BasisMismatch("trace length does not match operator basis of dimension " +
                            std::to_string(dtn.n()));
    return (dtn.lambda * g).dot(dtn.mass * h);
}

double gap_pair(const DtNMatrix& background, const DtNMatrix& with_obstacle,
                const VecX& g, const VecX& h) {
    require_compatible(background, with_obstacle);
    return pair(background, g, h) - pair(with_obstacle, g, h);
}

void require_matching(const DtNMatrix& dtn, const TriSurface& outer) {
    if (dtn.n() != outer.nv())
        throw BasisMismatch("operator basis of dimension " + std::to_string(dtn.n()) +
                            " does not match mesh with " +
                            std::to_string(outer.nv()) + " vertices");
    if (dtn.fingerprint != mesh_fingerprint(outer))
        throw FingerprintMismatch("stored operator was assembled on a different mesh");
}

void save_dtn(const std::string& path, const DtNMatrix& dtn, bool binary) {
    // Write to a sibling temp file and rename so readers never see a torn file.
    const std::string tmp = path + ".tmp";
    {
        FilePtr f(std::fopen(tmp.c_str(), "wb"));
        if (!f) throw Error("cannot open " + tmp + " for writing");
        std::fprintf(f.get(), "PROBEKIT-DTN 1\n%s\n%d\n%s %s\n",
                     dtn.fingerprint.c_str(), dtn.n(),
                     binary ? "raw" : "text",
                     dtn.provenance == Provenance::WithObstacle ? "with_obstacle"
                                                                : "background");
        if (binary) {
            write_matrix_raw(f.get(), dtn.lambda);
            write_matrix_raw(f.get(), dtn.mass);
        } else {
            write_matrix_text(f.get(), dtn.lambda);
            write_matrix_text(f.get(), dtn.mass);
        }
        if (std::fflush(f.get()) != 0)
            throw Error("cannot flush " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

DtNMatrix load_dtn(const std::string& path) {
    FilePtr f(std::fopen(path.c_str(), "rb"));
    if (!f) throw FormatError("cannot open " + path);

    char magic[32] = {0};
    int version = 0;
    if (std::fscanf(f.get(), "%31s %d", magic, &version) != 2 ||
        std::strcmp(magic, "PROBEKIT-DTN") != 0)
        throw FormatError(path + ": missing PROBEKIT-DTN header");
    if (version != 1)
        throw FormatError(path + ": unsupported version " + std::to_string(version));

    char fingerprint[128] = {0};
    long n = 0;
    char mode[16] = {0};
    char prov[32] = {0};
    if (std::fscanf(f.get(), "%127s %ld %15s %31s", fingerprint, &n, mode, prov) != 4)
        throw FormatError(path + ": truncated header");
    if (n <= 0 || n > 1000000)
        throw FormatError(path + ": implausible basis dimension " + std::to_string(n));

    DtNMatrix out;
    out.fingerprint = fingerprint;
    if (std::strcmp(prov, "with_obstacle") == 0)
        out.provenance = Provenance::WithObstacle;
    else if (std::strcmp(prov, "background") == 0)
        out.provenance = Provenance::Background;
    else
        throw FormatError(path + ": unknown provenance token");

    out.lambda.resize(n, n);
    out.mass.resize(n, n);
    if (std::strcmp(mode, "text") == 0) {
        read_matrix_text(f.get(), out.lambda, path);
        read_matrix_text(f.get(), out.mass, path);
    } else if (std::strcmp(mode, "raw") == 0) {
        // Header is text; the payload starts right after the newline.
        int c = std::fgetc(f.get());
        if (c != '\n')
            throw FormatError(path + ": malformed header terminator");
        read_matrix_raw(f.get(), out.lambda, path);
        read_matrix_raw(f.get(), out.mass, path);
    } else {
        throw FormatError(path + ": unknown encoding token");
    }
    return out;
}

} // namespace probekit::dtn

#pragma once

#include "probekit/errors.hpp"
#include "probekit/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace probekit {

// Smooth reference surface carried alongside a mesh. Quadrature nodes are
// lifted onto it so curvature-sensitive integrals see the true surface, not
// the facets.
struct AnalyticSurface {
    enum class Kind { Sphere, Ellipsoid };
    Kind kind = Kind::Sphere;
    Vec3 center = Vec3::Zero();
    Vec3 semi = Vec3::Ones(); // sphere stores (r, r, r)

    Vec3 project(const Vec3& p) const;
    Vec3 unit_normal(const Vec3& on_surface) const;
    // Jacobian of `project` at p (p off-surface allowed).
    Eigen::Matrix3d dproject(const Vec3& p) const;
};

// Closed, oriented triangle surface with per-triangle quadrature.
// When `analytic` is present the quadrature nodes live on the smooth surface
// and `area` holds the curved patch areas; otherwise everything is flat.
struct TriSurface {
    Points V;
    Triangles F;
    Points face_normal;  // flat outward unit normal per triangle
    VecX area;           // per-triangle area = sum of that triangle's weights

    int q_per_tri = 0;
    Points qnode;    // (nt*q) x 3
    VecX qweight;    // nt*q
    Points qnormal;  // (nt*q) x 3, outward
    MatX qshape;     // (nt*q) x 3, P1 vertex shape values at the nodes

    Points vertex_normal; // nv x 3 (analytic where available, else averaged)
    std::optional<AnalyticSurface> analytic;

    double max_edge = 0;
    double diameter = 0;
    double surface_tol = 0; // on-surface band: facet sag for analytic meshes
    Vec3 centroid = Vec3::Zero();

    int nv() const { return static_cast<int>(V.rows()); }
    int nt() const { return static_cast<int>(F.rows()); }
    double total_area() const { return area.sum(); }
    double signed_volume() const;   // flat polyhedron volume (orientation check)
    double enclosed_volume() const; // divergence theorem on the stored quadrature

    double distance(const Vec3& x) const;  // min point-to-triangle distance
    double winding(const Vec3& x) const;   // ~1 inside, ~0 outside
    bool contains(const Vec3& x) const { return winding(x) > 0.5; }
};

// Validates closedness, orientability, connectivity and outward orientation,
// then builds quadrature of the requested polynomial degree.
TriSurface make_tri_surface(Points V, Triangles F,
                            std::optional<AnalyticSurface> analytic = {},
                            int quad_degree = 5);

// Icosahedral subdivision sphere: 10*4^level + 2 vertices.
TriSurface build_sphere_mesh(const Vec3& center, double radius, int level,
                             int quad_degree = 5);
TriSurface build_ellipsoid_mesh(const Vec3& center, const Vec3& semi, int level,
                                int quad_degree = 5);

// P1 mass matrix from the stored quadrature (dense; desk-scale meshes).
MatX assemble_mass_matrix(const TriSurface& s);

// Stable hex digest of the vertex/triangle data; keys DtN files to meshes.
std::string mesh_fingerprint(const TriSurface& s);

// Near-surface exclusion radius: factor x max edge length (default 2).
double eps_near(const TriSurface& s, double factor = 2.0);

struct Domain {
    TriSurface outer;
    std::optional<TriSurface> obstacle;
    double clearance = 0; // min distance between the two surfaces

    bool has_obstacle() const { return obstacle.has_value(); }
    double diameter() const { return outer.diameter; }
};

// Checks the obstacle sits strictly inside the outer surface.
Domain make_domain(TriSurface outer, std::optional<TriSurface> obstacle = {});

enum class Region { Exterior, InShell, InObstacle };

struct PointClass {
    Region region;
    double dist_outer;
    double dist_obstacle; // +inf when there is no obstacle
};

// Throws AmbiguousPoint within the surface tolerance band of either surface.
PointClass classify_point(const Domain& dom, const Vec3& x);

struct Needle {
    Points points; // polyline: first point on the outer surface, last = tip

    Vec3 tip() const { return points.row(points.rows() - 1); }
    Vec3 entry() const { return points.row(0); }
    int segments() const { return static_cast<int>(points.rows()) - 1; }
    double length() const;
};

// Validates endpoint placement and non-self-intersection.
Needle make_needle(const Domain& dom, const Points& pts);
// Straight needle reaching `tip` from the outer surface along -direction;
// the entry point is found by ray casting from the tip along `direction`.
Needle straight_needle(const Domain& dom, const Vec3& tip, const Vec3& direction);

enum class NeedleHit { Avoids, Hits };

struct NeedleHitReport {
    NeedleHit verdict;
    bool tangential = false; // min distance under tolerance; treated as Hits
    double min_distance = 0; // polyline-to-obstacle-surface distance
};

NeedleHitReport needle_hits_obstacle(const Domain& dom, const Needle& needle);

// Probe-point set for scans; only points inside the outer surface are kept.
struct ScanGrid {
    Points points;
    VecX dist_outer;
    VecX dist_obstacle;
    std::vector<Region> region;
    std::vector<uint8_t> near_flag; // closer than eps_near to either surface

    // present when the grid came from a box lattice (enables VTK export)
    struct Lattice {
        Vec3 lo;
        int nx = 0, ny = 0, nz = 0;
        double spacing = 0;
        std::vector<int> row_of_cell; // -1 for cells without a kept point
    };
    std::optional<Lattice> lattice;

    int size() const { return static_cast<int>(points.rows()); }
};

ScanGrid make_scan_grid(const Domain& dom, const Vec3& lo, const Vec3& hi,
                        double spacing, double eps);
ScanGrid make_scan_grid(const Domain& dom, const Points& pts, double eps);

// Line-oriented mesh / needle files.
void save_mesh(const std::string& path, const TriSurface& s);
TriSurface load_mesh(const std::string& path, int quad_degree = 5);
void save_needle(const std::string& path, const Needle& n);
Points load_needle_points(const std::string& path);
Needle load_needle(const std::string& path, const Domain& dom);

// Geometry helpers shared with the quadrature/potential layer.
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b,
                               const Vec3& c);
bool segment_hits_triangle(const Vec3& p, const Vec3& q, const Vec3& a,
                           const Vec3& b, const Vec3& c);
double segment_triangle_distance(const Vec3& p, const Vec3& q, const Vec3& a,
                                 const Vec3& b, const Vec3& c);
// First intersection of the ray origin + t*dir (t > 0) with the surface;
// throws Error when the ray misses.
Vec3 ray_surface_exit(const TriSurface& s, const Vec3& origin, const Vec3& dir);

} // namespace probekit

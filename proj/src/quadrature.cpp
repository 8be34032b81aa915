#include "probekit/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace probekit {

namespace {

TriRule make_centroid_rule() {
    TriRule r;
    r.bary.resize(1, 3);
    r.bary << 1.0 / 3, 1.0 / 3, 1.0 / 3;
    r.weight = VecX::Constant(1, 1.0);
    r.degree = 1;
    return r;
}

TriRule make_deg2_rule() {
    TriRule r;
    r.bary.resize(3, 3);
    r.bary << 2.0 / 3, 1.0 / 6, 1.0 / 6,
              1.0 / 6, 2.0 / 3, 1.0 / 6,
              1.0 / 6, 1.0 / 6, 2.0 / 3;
    r.weight = VecX::Constant(3, 1.0 / 3);
    r.degree = 2;
    return r;
}

void push_sym3(Points& b, VecX& w, int& k, double a, double wt) {
    const double c = 1.0 - 2.0 * a;
    b.row(k) << c, a, a; w(k++) = wt;
    b.row(k) << a, c, a; w(k++) = wt;
    b.row(k) << a, a, c; w(k++) = wt;
}

TriRule make_deg5_rule() {
    TriRule r;
    r.bary.resize(7, 3);
    r.weight.resize(7);
    int k = 0;
    r.bary.row(k) << 1.0 / 3, 1.0 / 3, 1.0 / 3;
    r.weight(k++) = 9.0 / 40;
    push_sym3(r.bary, r.weight, k, 0.47014206410511508, 0.13239415278850618);
    push_sym3(r.bary, r.weight, k, 0.10128650732345633, 0.12593918054482715);
    r.degree = 5;
    return r;
}

// Conical (collapsed-square) Gauss product rule on the reference triangle:
//   int_T f = int_0^1 int_0^1 f(xi (1-eta), eta) (1-eta) dxi deta.
// With n_xi and n_eta Gauss-Legendre points this is exact for total degree
// min(2 n_xi - 1, 2 n_eta - 2); all weights positive, all nodes interior.
TriRule make_collapsed_rule(int n_xi, int n_eta) {
    const LineRule& gx = gauss_legendre_01(n_xi);
    const LineRule& ge = gauss_legendre_01(n_eta);
    TriRule r;
    r.bary.resize(n_xi * n_eta, 3);
    r.weight.resize(n_xi * n_eta);
    int k = 0;
    for (int i = 0; i < n_xi; ++i) {
        for (int j = 0; j < n_eta; ++j) {
            const double x = gx.node(i) * (1.0 - ge.node(j));
            const double y = ge.node(j);
            r.bary.row(k) << 1.0 - x - y, x, y;
            // stored weights sum to 1 (reference area 1/2 carried by callers)
            r.weight(k) = 2.0 * gx.weight(i) * ge.weight(j) * (1.0 - ge.node(j));
            ++k;
        }
    }
    r.degree = std::min(2 * n_xi - 1, 2 * n_eta - 2);
    return r;
}

} // namespace

const TriRule& tri_rule(int degree) {
    static const TriRule r1 = make_centroid_rule();
    static const TriRule r2 = make_deg2_rule();
    static const TriRule r5 = make_deg5_rule();
    static const TriRule r7 = make_collapsed_rule(4, 5);
    if (degree <= 1) return r1;
    if (degree <= 2) return r2;
    if (degree <= 5) return r5;
    if (degree <= 7) return r7;
    return r7;
}

const LineRule& gauss_legendre_01(int n) {
    static std::map<int, LineRule> cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    if (n < 1) throw std::invalid_argument("gauss_legendre_01: n must be >= 1");

    // Newton iteration on Legendre roots over [-1,1], then shift to [0,1].
    LineRule r;
    r.node.resize(n);
    r.weight.resize(n);
    for (int i = 0; i < n; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double p0 = 0, p1 = 0;
        for (int iter = 0; iter < 100; ++iter) {
            p0 = 1.0;
            p1 = 0.0;
            for (int j = 0; j < n; ++j) {
                const double p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) * x * p1 - j * p2) / (j + 1);
            }
            const double dp = n * (x * p0 - p1) / (x * x - 1.0);
            const double dx = p0 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        p1 = 0.0;
        p0 = 1.0;
        for (int j = 0; j < n; ++j) {
            const double p2 = p1;
            p1 = p0;
            p0 = ((2 * j + 1) * x * p1 - j * p2) / (j + 1);
        }
        const double dp = n * (x * p0 - p1) / (x * x - 1.0);
        r.node(i) = 0.5 * (x + 1.0);
        r.weight(i) = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    return cache.emplace(n, std::move(r)).first->second;
}

} // namespace probekit

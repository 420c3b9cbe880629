#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace hvlab {

using cplx = std::complex<double>;
using cvec = std::vector<cplx>;
using rvec = std::vector<double>;

inline constexpr double pi = std::numbers::pi;
inline constexpr cplx I{0.0, 1.0};

// Every failure mode named by the module contracts gets its own type so that
// callers (and the CLI exit-code mapping) can dispatch on it.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "Error"; }
};

#define HVLAB_ERROR(Name)                                                   \
    struct Name : Error {                                                   \
        using Error::Error;                                                 \
        const char* kind() const noexcept override { return #Name; }        \
    }

HVLAB_ERROR(PreconditionViolated);
HVLAB_ERROR(UnresolvedWindow);
HVLAB_ERROR(GridMismatch);
HVLAB_ERROR(NonOrthonormalOrbitals);
HVLAB_ERROR(OrderExceedsN);
HVLAB_ERROR(CapacityExceeded);
HVLAB_ERROR(WindowKindMismatch);
HVLAB_ERROR(InsufficientSnapshots);
HVLAB_ERROR(DegenerateSeries);
HVLAB_ERROR(ProblemTooLarge);
HVLAB_ERROR(NonConvergence);
HVLAB_ERROR(ConfigInvalid);
HVLAB_ERROR(FormatError);

#undef HVLAB_ERROR

inline void require(bool cond, const std::string& what) {
    if (!cond) throw PreconditionViolated(what);
}

inline bool is_pow2(long n) { return n > 0 && (n & (n - 1)) == 0; }

inline double binomial(int n, int k) {
    if (k < 0 || k > n) return 0.0;
    double r = 1.0;
    for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
    return r;
}

// N!/(N-k)!
inline double falling(int n, int k) {
    double r = 1.0;
    for (int i = 0; i < k; ++i) r *= (n - i);
    return r;
}

inline double norm2(const cvec& v) {
    double s = 0.0;
    for (auto& z : v) s += std::norm(z);
    return s;
}

inline cplx dot(const cvec& a, const cvec& b) {  // <a,b>, antilinear in a
    cplx s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
    return s;
}

// Gauss-Legendre nodes/weights on [0,1].
struct Quadrature {
    rvec x, w;
};

inline Quadrature gauss_legendre01(int n) {
    Quadrature q;
    q.x.resize(n);
    q.w.resize(n);
    for (int i = 0; i < n; ++i) {
        double z = std::cos(pi * (i + 0.75) / (n + 0.5)), dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = z;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (z * p1 - p0) / (z * z - 1.0);
            double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        q.x[i] = 0.5 * (1.0 - z);
        q.w[i] = 1.0 / ((1.0 - z * z) * dp * dp);
    }
    return q;
}

// Double-exponential nodes on (-1,1); suited to integrands flat at the ends.
inline Quadrature tanh_sinh(double h = 1.0 / 32.0, double tmax = 3.3) {
    Quadrature q;
    int n = static_cast<int>(tmax / h);
    for (int k = -n; k <= n; ++k) {
        double t = k * h;
        double u = 0.5 * pi * std::sinh(t);
        double x = std::tanh(u);
        double c = std::cosh(u);
        double w = h * 0.5 * pi * std::cosh(t) / (c * c);
        if (std::abs(x) >= 1.0) continue;
        q.x.push_back(x);
        q.w.push_back(w);
    }
    return q;
}

// Ordinary least squares slope of y on x with its standard error.
struct LineFit {
    double slope = 0, intercept = 0, slope_se = 0, residual = 0;
};

inline LineFit fit_line(const rvec& x, const rvec& y) {
    const std::size_t n = x.size();
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) mx += x[i], my += y[i];
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double r = y[i] - f.intercept - f.slope * x[i];
        ss += r * r;
    }
    f.residual = std::sqrt(ss);
    f.slope_se = n > 2 ? std::sqrt(ss / (n - 2) / sxx) : 0.0;
    return f;
}

}  // namespace hvlab

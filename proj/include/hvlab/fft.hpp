#pragma once

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

#include "common.hpp"

namespace hvlab::fft {

// FFTW planning is not thread-safe; execution with the new-array interface is.
// Plans are cached per (rank, sizes, sign) and made with FFTW_UNALIGNED so any
// std::vector<cplx> buffer may be passed.
namespace detail {
inline std::mutex& mtx() {
    static std::mutex m;
    return m;
}
inline fftw_plan plan(int n0, int n1, int sign) {
    static std::map<std::tuple<int, int, int>, fftw_plan> cache;
    std::lock_guard<std::mutex> lk(mtx());
    auto key = std::make_tuple(n0, n1, sign);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    cvec tmp(static_cast<std::size_t>(n0) * (n1 > 0 ? n1 : 1));
    auto* p = reinterpret_cast<fftw_complex*>(tmp.data());
    fftw_plan pl = n1 > 0 ? fftw_plan_dft_2d(n0, n1, p, p, sign, FFTW_ESTIMATE | FFTW_UNALIGNED)
                          : fftw_plan_dft_1d(n0, p, p, sign, FFTW_ESTIMATE | FFTW_UNALIGNED);
    cache.emplace(key, pl);
    return pl;
}
}  // namespace detail

// Unnormalized transforms: forward = sum_j x_j e^{-2 pi i jn/M}, backward uses +.
inline void forward(cplx* data, int n) {
    auto* p = reinterpret_cast<fftw_complex*>(data);
    fftw_execute_dft(detail::plan(n, 0, FFTW_FORWARD), p, p);
}
inline void backward(cplx* data, int n) {
    auto* p = reinterpret_cast<fftw_complex*>(data);
    fftw_execute_dft(detail::plan(n, 0, FFTW_BACKWARD), p, p);
}
inline void forward2(cplx* data, int n0, int n1) {
    auto* p = reinterpret_cast<fftw_complex*>(data);
    fftw_execute_dft(detail::plan(n0, n1, FFTW_FORWARD), p, p);
}
inline void backward2(cplx* data, int n0, int n1) {
    auto* p = reinterpret_cast<fftw_complex*>(data);
    fftw_execute_dft(detail::plan(n0, n1, FFTW_BACKWARD), p, p);
}

inline void forward(cvec& v) { forward(v.data(), static_cast<int>(v.size())); }
inline void backward(cvec& v) { backward(v.data(), static_cast<int>(v.size())); }

// Unitary DFT (site basis -> mode basis) and its inverse.
inline cvec to_modes(cvec v) {
    forward(v);
    const double s = 1.0 / std::sqrt(static_cast<double>(v.size()));
    for (auto& z : v) z *= s;
    return v;
}
inline cvec to_sites(cvec v) {
    backward(v);
    const double s = 1.0 / std::sqrt(static_cast<double>(v.size()));
    for (auto& z : v) z *= s;
    return v;
}

// Apply the unitary DFT along one axis of a row-major tensor with `rank` axes of
// extent M. dir=+1 forward (to modes), -1 backward.
inline void transform_axis(cvec& t, int M, int rank, int axis, int dir) {
    std::size_t inner = 1;
    for (int a = axis + 1; a < rank; ++a) inner *= M;
    const std::size_t outer = t.size() / (inner * M);
    cvec buf(M);
    const double s = 1.0 / std::sqrt(static_cast<double>(M));
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * M * inner + i;
            for (int m = 0; m < M; ++m) buf[m] = t[base + m * inner];
            if (dir > 0) forward(buf.data(), M);
            else backward(buf.data(), M);
            for (int m = 0; m < M; ++m) t[base + m * inner] = buf[m] * s;
        }
}

}  // namespace hvlab::fft

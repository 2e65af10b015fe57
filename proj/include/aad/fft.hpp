#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "aad/common.hpp"

namespace aad::dsp {

/// In-place iterative radix-2 FFT. Size must be a power of two.
template <typename S>
void fft_inplace(std::vector<std::complex<S>>& a, bool inverse = false) {
    const size_t n = a.size();
    if (n == 0 || (n & (n - 1)) != 0)
        throw ShapeMismatch("FFT size must be a power of two, got " + std::to_string(n));

    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = (inverse ? 2.0 : -2.0) * M_PI / static_cast<double>(len);
        const std::complex<S> wl(static_cast<S>(std::cos(ang)), static_cast<S>(std::sin(ang)));
        for (size_t i = 0; i < n; i += len) {
            std::complex<S> w(1);
            for (size_t k = 0; k < len / 2; ++k) {
                const std::complex<S> u = a[i + k];
                const std::complex<S> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
    if (inverse) {
        const S inv_n = static_cast<S>(1) / static_cast<S>(n);
        for (auto& x : a) x *= inv_n;
    }
}

/// Forward FFT of a real frame; returns the full complex spectrum.
template <typename S>
std::vector<std::complex<S>> fft_real(const S* frame, size_t n) {
    std::vector<std::complex<S>> a(n);
    for (size_t i = 0; i < n; ++i) a[i] = std::complex<S>(frame[i], 0);
    fft_inplace(a);
    return a;
}

}  // namespace aad::dsp

// SPDX-License-Identifier: Apache-2.0
/**
 * Thin FFTW wrapper for the periodic spatial grid: in-place 3D c2c transforms
 * on an owned buffer, normalized so inverse(forward(x)) == x. Planner calls
 * are serialized globally (FFTW's planner is not thread safe); execution on
 * distinct objects is safe.
 */
#pragma once

#include <complex>
#include <cstddef>
#include <mutex>
#include <vector>

#include <fftw3.h>

#include "rvmb/core.hpp"

namespace rvmb {

inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

class fft3 {
  public:
    explicit fft3(int n) : n_(n) {
        if (n < 1) throw config_error("fft3: grid size must be positive");
        buf_.resize(static_cast<std::size_t>(n) * n * n);
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        auto* d = reinterpret_cast<fftw_complex*>(buf_.data());
        fwd_ = fftw_plan_dft_3d(n, n, n, d, d, FFTW_FORWARD, FFTW_ESTIMATE);
        inv_ = fftw_plan_dft_3d(n, n, n, d, d, FFTW_BACKWARD, FFTW_ESTIMATE);
        if (fwd_ == nullptr || inv_ == nullptr)
            throw numerical_error("fft3: plan creation failed");
    }

    ~fft3() {
        std::lock_guard<std::mutex> lock(fftw_planner_mutex());
        if (fwd_ != nullptr) fftw_destroy_plan(fwd_);
        if (inv_ != nullptr) fftw_destroy_plan(inv_);
    }

    fft3(const fft3&) = delete;
    fft3& operator=(const fft3&) = delete;

    int size() const { return n_; }
    std::size_t total() const { return buf_.size(); }
    std::complex<double>* data() { return buf_.data(); }
    const std::complex<double>* data() const { return buf_.data(); }

    /// Flat index of (ix, iy, iz), z contiguous.
    std::size_t index(int ix, int iy, int iz) const {
        return (static_cast<std::size_t>(ix) * n_ + iy) * n_ + iz;
    }

    void forward() { fftw_execute(fwd_); }

    void inverse() {
        fftw_execute(inv_);
        double s = 1.0 / static_cast<double>(total());
        for (auto& c : buf_) c *= s;
    }

  private:
    int n_ = 0;
    std::vector<std::complex<double>> buf_;
    fftw_plan fwd_ = nullptr;
    fftw_plan inv_ = nullptr;
};

/// Signed integer mode of spectral bin i on an n-point grid.
inline int fft_mode(int i, int n) {
    return i <= n / 2 ? i : i - n;
}

/// Angular wavenumber of bin i for a periodic box of the given length.
inline double wavenumber(int i, int n, double length) {
    return 2.0 * pi * fft_mode(i, n) / length;
}

/**
 * Wavenumber for spectral differentiation: the unpaired Nyquist mode of an
 * even-sized grid is zeroed so that derivatives of real fields stay real.
 */
inline double wavenumber_derivative(int i, int n, double length) {
    if (n % 2 == 0 && i == n / 2) return 0.0;
    return wavenumber(i, n, length);
}

} // namespace rvmb

#pragma once

// Reference evaluation of the fractional Laplacian through its Fourier
// symbol |xi|^{2s}. Used as an independent check of the quadrature operator;
// it shares no code with fracop.hpp.

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <functional>
#include <numbers>
#include <vector>

namespace fraclab::oracle {

/// Applies |xi|^{2s} to samples u_j = u(x0 + j h), zero-padded to `padded`
/// points (periodic images are `padded * h` apart). Returns the first
/// `samples.size()` values.
inline Eigen::VectorXd fourier_fractional_laplacian(const Eigen::VectorXd& samples, double h,
                                                    double s, std::size_t padded = 1u << 16) {
    const std::size_t n = static_cast<std::size_t>(samples.size());
    std::size_t m = padded;
    while (m < 2 * n) m <<= 1;
    std::vector<std::complex<double>> buf(m), spec;
    for (std::size_t j = 0; j < n; ++j) buf[j] = samples(static_cast<Eigen::Index>(j));
    Eigen::FFT<double> fft;
    fft.fwd(spec, buf);
    const double dxi = 2.0 * std::numbers::pi / (static_cast<double>(m) * h);
    for (std::size_t k = 0; k < m; ++k) {
        const double kk = k <= m / 2 ? static_cast<double>(k) : static_cast<double>(k) - m;
        spec[k] *= std::pow(std::abs(kk * dxi), 2.0 * s);
    }
    fft.inv(buf, spec);
    Eigen::VectorXd out(samples.size());
    for (std::size_t j = 0; j < n; ++j) out(static_cast<Eigen::Index>(j)) = buf[j].real();
    return out;
}

/// Same, for a function sampled on a finer lattice of its own: u is evaluated
/// at x0 + j h/refine and the result is read back at the coarse points.
inline Eigen::VectorXd fourier_fractional_laplacian(const std::function<double(double)>& u,
                                                    double x0, double h, Eigen::Index n_coarse,
                                                    double s, int refine,
                                                    std::size_t padded = 1u << 16) {
    const double hf = h / refine;
    const Eigen::Index nf = (n_coarse - 1) * refine + 1;
    Eigen::VectorXd fine(nf);
    for (Eigen::Index j = 0; j < nf; ++j) fine(j) = u(x0 + static_cast<double>(j) * hf);
    const Eigen::VectorXd lf = fourier_fractional_laplacian(fine, hf, s, padded);
    Eigen::VectorXd out(n_coarse);
    for (Eigen::Index i = 0; i < n_coarse; ++i) out(i) = lf(i * refine);
    return out;
}

/// Closed form of (-Delta)^s exp(-x^2) at x = 0.
inline double gaussian_at_origin(double s) {
    return std::pow(4.0, s) * std::tgamma(s + 0.5) / std::sqrt(std::numbers::pi);
}

}  // namespace fraclab::oracle

#pragma once

#include <complex>
#include <span>

namespace d2nn::detail {

/// In-place-capable unnormalized 2-D DFT of a side x side row-major array.
/// `inverse` uses the +i kernel; callers divide by side^2 themselves.
void fft2d(std::span<const std::complex<double>> in, std::span<std::complex<double>> out, int side,
           bool inverse);

}  // namespace d2nn::detail

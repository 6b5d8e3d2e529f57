#include "fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>
#include <mutex>
#include <tuple>

#include "d2nn/error.hpp"

namespace d2nn::detail {
namespace {

// FFTW planning is not thread-safe; execution through the new-array interface
// is. Plans are created once per (side, direction, in-place) and kept for the
// process. They assume SIMD alignment; misaligned arrays go through aligned
// scratch buffers so every transform of a size runs the same plan.
std::mutex plan_mutex;
std::map<std::tuple<int, bool, bool>, fftw_plan> plans;

fftw_plan plan_for(int side, bool inverse, bool in_place) {
  std::lock_guard lock(plan_mutex);
  auto key = std::make_tuple(side, inverse, in_place);
  if (auto it = plans.find(key); it != plans.end()) return it->second;

  auto* scratch_in = fftw_alloc_complex(static_cast<std::size_t>(side) * side);
  auto* scratch_out = fftw_alloc_complex(static_cast<std::size_t>(side) * side);
  fftw_plan plan = fftw_plan_dft_2d(side, side, scratch_in, in_place ? scratch_in : scratch_out,
                                    inverse ? FFTW_BACKWARD : FFTW_FORWARD,
                                    FFTW_ESTIMATE);
  fftw_free(scratch_in);
  fftw_free(scratch_out);
  require(plan != nullptr, ErrorKind::Numeric, "FFTW failed to create a plan");
  plans.emplace(key, plan);
  return plan;
}

struct Scratch {
  fftw_complex* data = nullptr;
  std::size_t size = 0;
  ~Scratch() { fftw_free(data); }
  fftw_complex* get(std::size_t n) {
    if (size < n) {
      fftw_free(data);
      data = fftw_alloc_complex(n);
      size = n;
    }
    return data;
  }
};

thread_local Scratch scratch;

}  // namespace

void fft2d(std::span<const std::complex<double>> in, std::span<std::complex<double>> out, int side,
           bool inverse) {
  const std::size_t n = static_cast<std::size_t>(side) * side;
  require(in.size() == n && out.size() == n, ErrorKind::InvalidArgument, "fft2d size mismatch");
  // Out-of-place complex plans never write through `in`.
  auto* src = reinterpret_cast<fftw_complex*>(const_cast<std::complex<double>*>(in.data()));
  auto* dst = reinterpret_cast<fftw_complex*>(out.data());
  if (fftw_alignment_of(reinterpret_cast<double*>(src)) == 0 && fftw_alignment_of(reinterpret_cast<double*>(dst)) == 0) {
    fftw_execute_dft(plan_for(side, inverse, src == dst), src, dst);
    return;
  }
  fftw_complex* buffer = scratch.get(n);
  std::memcpy(buffer, src, n * sizeof(fftw_complex));
  fftw_execute_dft(plan_for(side, inverse, true), buffer, buffer);
  std::memcpy(dst, buffer, n * sizeof(fftw_complex));
}

}  // namespace d2nn::detail

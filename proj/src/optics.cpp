#include "d2nn/optics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fft.hpp"

namespace d2nn {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void check_same_grid(const GridSpec& a, const GridSpec& b, const char* what) {
  if (!(a == b)) {
    fail(ErrorKind::GridMismatch, std::string(what) + ": grid " + std::to_string(a.side) + "@" +
                                      std::to_string(a.pitch) + " vs " + std::to_string(b.side) +
                                      "@" + std::to_string(b.pitch));
  }
}

// Signed DFT frequency index for FFT-order position k.
int signed_index(int k, int side) { return k < side / 2 ? k : k - side; }

}  // namespace

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::GridMismatch: return "grid-mismatch";
    case ErrorKind::Degenerate: return "degenerate-signal";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Data: return "data";
    case ErrorKind::Format: return "format";
    case ErrorKind::Version: return "version";
    case ErrorKind::Checksum: return "checksum";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::Stale: return "stale";
  }
  return "unknown";
}

void GridSpec::validate() const {
  require(side >= 4 && side % 2 == 0, ErrorKind::InvalidArgument,
          "grid side must be even and >= 4, got " + std::to_string(side));
  require(std::isfinite(pitch) && pitch > 0.0, ErrorKind::InvalidArgument,
          "grid pitch must be positive");
}

ComplexField ComplexField::zeros(const GridSpec& grid) {
  grid.validate();
  return ComplexField{grid, std::vector<Complex>(grid.size())};
}

double ComplexField::power() const {
  double sum = 0.0;
  for (const auto& u : values) sum += std::norm(u);
  return sum * grid.pitch * grid.pitch;
}

AmplitudeMask AmplitudeMask::ones(const GridSpec& grid) {
  grid.validate();
  return AmplitudeMask{grid, std::vector<double>(grid.size(), 1.0)};
}

std::vector<Complex> transfer_function(const GridSpec& grid, double distance) {
  grid.validate();
  require(std::isfinite(distance), ErrorKind::InvalidArgument, "propagation distance must be finite");
  require(distance >= 0.0, ErrorKind::InvalidArgument, "propagation distance must be >= 0");

  const int n = grid.side;
  const double df = 1.0 / (n * grid.pitch);
  std::vector<Complex> h(grid.size());
  for (int ky = 0; ky < n; ++ky) {
    const double fy = signed_index(ky, n) * df;
    for (int kx = 0; kx < n; ++kx) {
      const double fx = signed_index(kx, n) * df;
      const double band = 1.0 - fx * fx - fy * fy;
      if (band > 0.0) {
        h[static_cast<std::size_t>(ky) * n + kx] = std::polar(1.0, kTwoPi * distance * std::sqrt(band));
      }
    }
  }
  return h;
}

Propagator::Propagator(const GridSpec& grid, double distance, bool pad)
    : grid_(grid), work_grid_{pad ? 2 * grid.side : grid.side, grid.pitch}, distance_(distance),
      pad_(pad), kernel_(transfer_function(work_grid_, distance)) {
  // Fold the inverse-DFT normalization into the kernel.
  const double scale = 1.0 / static_cast<double>(work_grid_.size());
  for (auto& h : kernel_) h *= scale;
}

ComplexField Propagator::apply(const ComplexField& field, bool conjugate) const {
  check_same_grid(field.grid, grid_, "propagator");
  const int n = grid_.side;
  const int w = work_grid_.side;
  const int offset = (w - n) / 2;

  std::vector<Complex> work(work_grid_.size());
  for (int r = 0; r < n; ++r) {
    std::copy_n(field.values.begin() + static_cast<std::ptrdiff_t>(r) * n, n,
                work.begin() + static_cast<std::ptrdiff_t>(r + offset) * w + offset);
  }
  detail::fft2d(work, work, w, false);
  if (conjugate) {
    for (std::size_t i = 0; i < work.size(); ++i) work[i] *= std::conj(kernel_[i]);
  } else {
    for (std::size_t i = 0; i < work.size(); ++i) work[i] *= kernel_[i];
  }
  detail::fft2d(work, work, w, true);

  ComplexField out{grid_, std::vector<Complex>(grid_.size())};
  for (int r = 0; r < n; ++r) {
    std::copy_n(work.begin() + static_cast<std::ptrdiff_t>(r + offset) * w + offset, n,
                out.values.begin() + static_cast<std::ptrdiff_t>(r) * n);
  }
  return out;
}

ComplexField Propagator::forward(const ComplexField& field) const { return apply(field, false); }

// F^H diag(conj H) F / N^2 is the adjoint of F^-1 diag(H) F, and the
// embed/crop pair used for padding are adjoints of each other.
ComplexField Propagator::adjoint(const ComplexField& cotangent) const { return apply(cotangent, true); }

ComplexField propagate(const ComplexField& field, double distance) {
  return Propagator(field.grid, distance).forward(field);
}

ComplexField adjoint_propagate(const ComplexField& cotangent, double distance) {
  return Propagator(cotangent.grid, distance).adjoint(cotangent);
}

ComplexField direct_dft_propagate(const ComplexField& field, double distance) {
  field.grid.validate();
  const int n = field.grid.side;
  require(n <= 64, ErrorKind::InvalidArgument,
          "direct DFT oracle refuses grids wider than 64 (got " + std::to_string(n) + ")");
  require(std::isfinite(distance) && distance >= 0.0, ErrorKind::InvalidArgument,
          "propagation distance must be finite and >= 0");

  const double df = 1.0 / (n * field.grid.pitch);
  const std::size_t count = field.grid.size();

  // Spectrum by explicit summation: U[k] = sum_x u[x] exp(-2 pi i k.x / n).
  std::vector<Complex> spectrum(count);
  for (int ky = 0; ky < n; ++ky) {
    for (int kx = 0; kx < n; ++kx) {
      Complex acc{};
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          const double angle = -kTwoPi * ((ky * y + kx * x) % n) / n;
          acc += field.values[static_cast<std::size_t>(y) * n + x] * std::polar(1.0, angle);
        }
      }
      const double fx = signed_index(kx, n) * df;
      const double fy = signed_index(ky, n) * df;
      const double band = 1.0 - fx * fx - fy * fy;
      spectrum[static_cast<std::size_t>(ky) * n + kx] =
          band > 0.0 ? acc * std::polar(1.0, kTwoPi * distance * std::sqrt(band)) : Complex{};
    }
  }

  ComplexField out = ComplexField::zeros(field.grid);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      Complex acc{};
      for (int ky = 0; ky < n; ++ky) {
        for (int kx = 0; kx < n; ++kx) {
          const double angle = kTwoPi * ((ky * y + kx * x) % n) / n;
          acc += spectrum[static_cast<std::size_t>(ky) * n + kx] * std::polar(1.0, angle);
        }
      }
      out.at(y, x) = acc / static_cast<double>(count);
    }
  }
  return out;
}

ComplexField apply_phase_layer(const ComplexField& field, const PhaseLayer& layer) {
  check_same_grid(field.grid, layer.grid, "phase layer");
  ComplexField out = field;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= std::polar(1.0, layer.phase[i]);
  return out;
}

std::vector<Complex> phasors(const PhaseLayer& layer) {
  std::vector<Complex> out(layer.phase.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::polar(1.0, layer.phase[i]);
  return out;
}

void multiply_in_place(ComplexField& field, std::span<const Complex> transmission) {
  require(transmission.size() == field.values.size(), ErrorKind::GridMismatch, "transmission size != field size");
  for (std::size_t i = 0; i < transmission.size(); ++i) field.values[i] *= transmission[i];
}

ComplexField apply_mask(const ComplexField& field, const AmplitudeMask& mask) {
  check_same_grid(field.grid, mask.grid, "amplitude mask");
  ComplexField out = field;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= mask.amplitude[i];
  return out;
}

std::pair<PhaseLayer, AmplitudeMask> lens_phase(double focal_length, double aperture_diameter,
                                                const GridSpec& grid) {
  grid.validate();
  require(std::isfinite(focal_length) && focal_length > 0.0, ErrorKind::InvalidArgument,
          "focal length must be positive");
  require(std::isfinite(aperture_diameter) && aperture_diameter > 0.0, ErrorKind::InvalidArgument,
          "lens aperture must be positive");
  require(aperture_diameter <= grid.extent(), ErrorKind::InvalidArgument,
          "lens aperture " + std::to_string(aperture_diameter) + " exceeds grid extent " +
              std::to_string(grid.extent()));

  PhaseLayer phase{grid, std::vector<double>(grid.size())};
  AmplitudeMask mask{grid, std::vector<double>(grid.size())};
  const double radius = 0.5 * aperture_diameter;
  for (int r = 0; r < grid.side; ++r) {
    const double y = grid.coord(r);
    for (int c = 0; c < grid.side; ++c) {
      const double x = grid.coord(c);
      const double rho2 = x * x + y * y;
      const std::size_t i = static_cast<std::size_t>(r) * grid.side + c;
      phase.phase[i] = -std::numbers::pi * rho2 / focal_length;
      mask.amplitude[i] = rho2 <= radius * radius ? 1.0 : 0.0;
    }
  }
  return {std::move(phase), std::move(mask)};
}

DetectorLayout::DetectorLayout(const GridSpec& grid, double width, std::vector<Detector> detectors,
                               int class_count)
    : grid_(grid), width_(width), class_count_(class_count), detectors_(std::move(detectors)) {
  grid_.validate();
  require(class_count_ >= 1, ErrorKind::InvalidArgument, "class count must be positive");
  require(std::isfinite(width_) && width_ > 0.0, ErrorKind::InvalidArgument,
          "detector width must be positive");
  width_pixels_ = static_cast<int>(std::lround(width_ / grid_.pitch));
  require(width_pixels_ >= 1, ErrorKind::InvalidArgument, "detector narrower than one pixel");
  require(detectors_.size() == static_cast<std::size_t>(2 * class_count_), ErrorKind::InvalidArgument,
          "expected " + std::to_string(2 * class_count_) + " detectors, got " +
              std::to_string(detectors_.size()));

  positive_.assign(class_count_, SIZE_MAX);
  negative_.assign(class_count_, SIZE_MAX);
  std::vector<int> owner(grid_.size(), -1);
  const int n = grid_.side;
  for (std::size_t d = 0; d < detectors_.size(); ++d) {
    const Detector& det = detectors_[d];
    require(det.class_index >= 0 && det.class_index < class_count_, ErrorKind::InvalidArgument,
            "detector class out of range");
    require(det.sign == 1 || det.sign == -1, ErrorKind::InvalidArgument, "detector sign must be +1 or -1");
    auto& slot = det.sign > 0 ? positive_[det.class_index] : negative_[det.class_index];
    require(slot == SIZE_MAX, ErrorKind::InvalidArgument,
            "class " + std::to_string(det.class_index) + " has two detectors of the same sign");
    slot = d;

    // A pixel belongs to the detector iff its center lies in the half-open
    // square of side width_pixels * pitch centered on the detector.
    const double lo_x = det.cx / grid_.pitch + n / 2 - width_pixels_ / 2.0;
    const double lo_y = det.cy / grid_.pitch + n / 2 - width_pixels_ / 2.0;
    const int c0 = static_cast<int>(std::ceil(lo_x - 1e-9));
    const int r0 = static_cast<int>(std::ceil(lo_y - 1e-9));
    require(c0 >= 0 && r0 >= 0 && c0 + width_pixels_ <= n && r0 + width_pixels_ <= n,
            ErrorKind::InvalidArgument, "detector " + std::to_string(d) + " extends outside the grid");
    std::vector<std::size_t> pixels;
    pixels.reserve(static_cast<std::size_t>(width_pixels_) * width_pixels_);
    for (int r = r0; r < r0 + width_pixels_; ++r) {
      for (int c = c0; c < c0 + width_pixels_; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * n + c;
        require(owner[i] < 0, ErrorKind::InvalidArgument,
                "detectors " + std::to_string(owner[i]) + " and " + std::to_string(d) + " overlap");
        owner[i] = static_cast<int>(d);
        pixels.push_back(i);
      }
    }
    footprints_.push_back(std::move(pixels));
  }
}

DetectorLayout DetectorLayout::lattice(const GridSpec& grid, double width, int class_count) {
  constexpr int kRows = 5;
  constexpr int kCols = 4;
  require(class_count == kRows * kCols / 2, ErrorKind::InvalidArgument,
          "the default lattice holds exactly 10 classes");
  grid.validate();
  const int px = static_cast<int>(std::lround(width / grid.pitch));
  // Spacing is a whole number of pixels so every footprint is px x px.
  const double spacing = 2.0 * px * grid.pitch;
  std::vector<Detector> detectors;
  for (int row = 0; row < kRows; ++row) {
    for (int col = 0; col < kCols; ++col) {
      Detector d;
      d.cx = (col - (kCols - 1) / 2.0) * spacing;
      d.cy = (row - (kRows - 1) / 2.0) * spacing;
      d.class_index = row * 2 + col / 2;
      d.sign = (col % 2 == 0) ? +1 : -1;
      detectors.push_back(d);
    }
  }
  return DetectorLayout(grid, width, std::move(detectors), class_count);
}

std::vector<double> detector_readout(const ComplexField& field, const DetectorLayout& layout) {
  check_same_grid(field.grid, layout.grid(), "detector readout");
  const double area = field.grid.pitch * field.grid.pitch;
  std::vector<double> signals(layout.detectors().size());
  for (std::size_t d = 0; d < signals.size(); ++d) {
    double sum = 0.0;
    for (std::size_t i : layout.footprint(d)) sum += std::norm(field.values[i]);
    signals[d] = sum * area;
  }
  return signals;
}

}  // namespace d2nn

#pragma once

// Coherent scalar optics on a square sampled grid. All lengths are in units of
// the illumination wavelength (lambda = 1).

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "d2nn/error.hpp"

namespace d2nn {

using Complex = std::complex<double>;

struct GridSpec {
  int side = 64;       // neurons per edge
  double pitch = 0.5;  // neuron size in lambda

  void validate() const;
  std::size_t size() const { return static_cast<std::size_t>(side) * side; }
  double extent() const { return side * pitch; }
  /// Physical coordinate of pixel index i; index side/2 sits on the axis.
  double coord(int i) const { return (i - side / 2) * pitch; }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

struct ComplexField {
  GridSpec grid;
  std::vector<Complex> values;  // row-major, values[row * side + col]

  static ComplexField zeros(const GridSpec& grid);

  Complex& at(int row, int col) { return values[static_cast<std::size_t>(row) * grid.side + col]; }
  const Complex& at(int row, int col) const {
    return values[static_cast<std::size_t>(row) * grid.side + col];
  }

  /// Sum of |u|^2 times pixel area.
  double power() const;
};

struct PhaseLayer {
  GridSpec grid;
  std::vector<double> phase;  // radians, applied modulo 2*pi
};

struct AmplitudeMask {
  GridSpec grid;
  std::vector<double> amplitude;  // in [0, 1]

  static AmplitudeMask ones(const GridSpec& grid);
};

/// Free-space transfer function in FFT order (index k is frequency k for
/// k < side/2, else k - side). Zero on the evanescent band.
std::vector<Complex> transfer_function(const GridSpec& grid, double distance);

/// Angular-spectrum propagator with a precomputed, immutable kernel.
class Propagator {
 public:
  /// With `pad` the field is zero-padded to twice the side before
  /// propagation and cropped back afterwards.
  Propagator(const GridSpec& grid, double distance, bool pad = false);

  ComplexField forward(const ComplexField& field) const;
  /// Exact adjoint of forward under <u, v> = sum conj(u) v.
  ComplexField adjoint(const ComplexField& cotangent) const;

  const GridSpec& grid() const { return grid_; }
  double distance() const { return distance_; }

 private:
  ComplexField apply(const ComplexField& field, bool conjugate) const;

  GridSpec grid_;
  GridSpec work_grid_;
  double distance_;
  bool pad_;
  std::vector<Complex> kernel_;
};

ComplexField propagate(const ComplexField& field, double distance);
ComplexField adjoint_propagate(const ComplexField& cotangent, double distance);

/// Same discrete operator as propagate, evaluated with explicit O(N^4) DFT
/// sums. Test oracle only; refuses grids wider than 64.
ComplexField direct_dft_propagate(const ComplexField& field, double distance);

ComplexField apply_phase_layer(const ComplexField& field, const PhaseLayer& layer);
/// exp(i phase) per pixel, for reuse across many fields.
std::vector<Complex> phasors(const PhaseLayer& layer);
/// u *= transmission, in place.
void multiply_in_place(ComplexField& field, std::span<const Complex> transmission);
ComplexField apply_mask(const ComplexField& field, const AmplitudeMask& mask);

/// Thin lens exp(-i*pi*r^2/f) inside a circular aperture.
std::pair<PhaseLayer, AmplitudeMask> lens_phase(double focal_length, double aperture_diameter,
                                                const GridSpec& grid);

struct Detector {
  double cx = 0.0;  // center, lambda
  double cy = 0.0;
  int class_index = 0;
  int sign = +1;  // +1 positive detector, -1 negative detector
};

/// Square detectors resolved onto a grid. Construction validates footprint
/// containment, disjointness and the one-(+)-one-(-)-per-class assignment.
class DetectorLayout {
 public:
  DetectorLayout(const GridSpec& grid, double width, std::vector<Detector> detectors,
                 int class_count);

  /// 2C detectors on a 5-row x 4-column centered lattice, center spacing of
  /// twice the width, (+,-) of each class horizontally adjacent.
  static DetectorLayout lattice(const GridSpec& grid, double width, int class_count = 10);

  const GridSpec& grid() const { return grid_; }
  double width() const { return width_; }
  int width_pixels() const { return width_pixels_; }
  int class_count() const { return class_count_; }
  std::span<const Detector> detectors() const { return detectors_; }
  std::span<const std::size_t> footprint(std::size_t detector) const { return footprints_[detector]; }
  /// Detector index of the positive / negative detector of a class.
  std::size_t positive(int class_index) const { return positive_[class_index]; }
  std::size_t negative(int class_index) const { return negative_[class_index]; }

 private:
  GridSpec grid_;
  double width_;
  int width_pixels_;
  int class_count_;
  std::vector<Detector> detectors_;
  std::vector<std::vector<std::size_t>> footprints_;
  std::vector<std::size_t> positive_;
  std::vector<std::size_t> negative_;
};

/// Integrated intensity per detector, in detector order.
std::vector<double> detector_readout(const ComplexField& field, const DetectorLayout& layout);

}  // namespace d2nn

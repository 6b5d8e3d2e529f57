#pragma once

// Input encoding and the passive feature-engineering filters placed in front
// of a diffractive network: object-plane masks and 4-f Fourier-plane filters.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "d2nn/optics.hpp"

namespace d2nn {

inline constexpr int kImageSide = 32;
inline constexpr std::size_t kImagePixels = kImageSide * kImageSide;

/// Geometry shared by every network of a run.
struct OpticalProfile {
  std::string name = "desk";
  GridSpec grid{64, 0.5};
  int replication = 1;            // image pixel -> replication^2 neurons
  GridSpec fourier_grid{256, 0.5};  // grid of the 4-f system
  double detector_width = 3.2;
  double object_distance = 40.0;  // object / filter plane to first layer
  double layer_spacing = 40.0;
  double detector_distance = 40.0;  // last layer to detector plane
  int layers = 5;

  static OpticalProfile paper();
  static OpticalProfile desk();
  static OpticalProfile named(const std::string& name);

  int object_side() const { return kImageSide * replication; }
  double object_extent() const { return object_side() * grid.pitch; }
  void validate() const;

  friend bool operator==(const OpticalProfile&, const OpticalProfile&) = default;
};

enum class Channel { Amplitude, Phase };

struct EncodingSpec {
  Channel channel = Channel::Amplitude;
  double phase_range = 0.0;  // radians; only meaningful for Channel::Phase

  void validate() const;
  friend bool operator==(const EncodingSpec&, const EncodingSpec&) = default;
};

enum class ObjectFamily {
  Gaussian,
  MultiGaussian,
  Hamming,
  Hanning,
  Square,
  MultiSquare,
  RotatedPatch,
  Circle,
  Grating,
  ZonePlate,
  GaussianPlusSquare,
};

/// One windowed component of an object-plane filter. Interpretation of the
/// extents depends on the family: sigma for Gaussians, side lengths for
/// squares and patches, support width for Hamming/Hanning, radius (sx) for
/// circles.
struct FilterWindow {
  double cx = 0.0;
  double cy = 0.0;
  double sx = 1.0;
  double sy = 1.0;
  double angle = 0.0;

  friend bool operator==(const FilterWindow&, const FilterWindow&) = default;
};

struct ObjectFilterSpec {
  ObjectFamily family = ObjectFamily::Square;
  std::vector<FilterWindow> windows;
  double period = 0.0;       // grating period, lambda
  double orientation = 0.0;  // grating direction, radians
  double zone_focal = 0.0;   // zone-plate focal parameter, lambda

  void validate() const;
  friend bool operator==(const ObjectFilterSpec&, const ObjectFilterSpec&) = default;
};

enum class FourierKind { Annular, Trainable };

/// Annular: ring i spans radii [ring_edges[i], ring_edges[i+1]) and passes
/// light iff ring_pass[i]. The last edge may be +infinity. Radii outside every
/// ring are blocked.
struct FourierFilterSpec {
  FourierKind kind = FourierKind::Annular;
  std::vector<double> ring_edges;
  std::vector<bool> ring_pass;

  void validate() const;
  friend bool operator==(const FourierFilterSpec&, const FourierFilterSpec&) = default;
};

struct FourierPlacement {
  FourierFilterSpec filter;
  double aperture_scale = 1.0;  // output aperture side / object side: 1.0 or 1.5
  double focal_length = 145.6;
  double lens_diameter = 104.0;

  friend bool operator==(const FourierPlacement&, const FourierPlacement&) = default;
};

struct FrontEndSpec {
  EncodingSpec encoding;
  std::variant<ObjectFilterSpec, FourierPlacement> placement;

  bool fourier() const { return std::holds_alternative<FourierPlacement>(placement); }
  bool trainable() const;
  /// Checks internal consistency and that all geometry fits the profile.
  void validate(const OpticalProfile& profile) const;

  friend bool operator==(const FrontEndSpec&, const FrontEndSpec&) = default;
};

void to_json(nlohmann::json& j, const OpticalProfile& p);
void from_json(const nlohmann::json& j, OpticalProfile& p);
void to_json(nlohmann::json& j, const FrontEndSpec& spec);
void from_json(const nlohmann::json& j, FrontEndSpec& spec);

std::string to_string(ObjectFamily family);
ObjectFamily object_family_from_string(const std::string& name);

/// Places a 32x32 image onto the centered object region of `grid` by integer
/// replication. Values must lie in [0, 1].
ComplexField encode_input(std::span<const float> image, const EncodingSpec& enc, const GridSpec& grid,
                          int replication);

/// Object-plane mask; zero outside the object region.
AmplitudeMask make_object_filter(const ObjectFilterSpec& spec, const GridSpec& grid, int object_side);

/// Fourier-plane mask. The trainable kind maps `latent` through the logistic
/// function; `latent` is ignored for the annular kind.
AmplitudeMask make_fourier_filter(const FourierFilterSpec& spec, const GridSpec& grid,
                                  std::span<const double> latent = {});

/// Square output aperture of the 4-f system, centered, side = scale * object extent.
AmplitudeMask square_aperture(const GridSpec& grid, double side);

/// Precomputed front-end optics for one spec. Immutable and shareable.
class FrontEnd {
 public:
  FrontEnd(const FrontEndSpec& spec, const OpticalProfile& profile);

  /// Reverse-mode state for trainable Fourier filters.
  struct Tape {
    ComplexField filter_input;  // field arriving at the Fourier plane
  };

  /// Output field on the network grid. `tape` is filled when non-null.
  ComplexField apply(std::span<const float> image, std::span<const double> latent = {},
                     Tape* tape = nullptr) const;

  /// Accumulates dL/dlatent given the cotangent of the output field.
  void backward_latent(const Tape& tape, const ComplexField& cotangent, std::span<const double> latent,
                       std::span<double> grad_latent) const;

  const FrontEndSpec& spec() const { return spec_; }
  bool trainable() const { return spec_.trainable(); }
  std::size_t latent_size() const { return trainable() ? profile_.fourier_grid.size() : 0; }

 private:
  ComplexField crop_to_network(const ComplexField& field) const;
  ComplexField embed_in_fourier(const ComplexField& field) const;

  FrontEndSpec spec_;
  OpticalProfile profile_;
  AmplitudeMask object_mask_;
  // 4-f system
  std::optional<Propagator> focal_hop_;
  std::vector<Complex> lens_;  // pupil * exp(i theta)
  AmplitudeMask fourier_mask_;  // fixed filters only
  AmplitudeMask output_aperture_;
};

/// One-shot convenience wrapper around FrontEnd.
ComplexField apply_front_end(std::span<const float> image, const FrontEndSpec& spec,
                             const OpticalProfile& profile, std::span<const double> latent = {});

/// Member counts per pool category.
struct PoolCounts {
  int amplitude_object = 0;
  int amplitude_fourier = 0;
  int phase_object = 0;
  int phase_fourier = 0;

  int total() const { return amplitude_object + amplitude_fourier + phase_object + phase_fourier; }
  /// Largest-remainder split of `total` in the 276 : 64 : 656 : 256 ratio.
  static PoolCounts proportional(int total);
};

/// Documented sampler ranges, all in lambda.
struct SamplerRanges {
  double sigma_min = 2.0, sigma_max = 16.0;
  double window_min = 4.0, window_max = 24.0;
  double period_min = 2.0, period_max = 16.0;
  double zone_focal_min = 20.0, zone_focal_max = 200.0;
  double min_transmission = 0.02;  // of a uniform object's power
  int annular_rings = 8;
};

/// Seeded, deterministic, pairwise-distinct pool of front-end specs in
/// category order (amplitude/object, amplitude/Fourier, phase/object,
/// phase/Fourier).
std::vector<FrontEndSpec> sample_pool_specs(std::uint64_t seed, const PoolCounts& counts,
                                            const OpticalProfile& profile,
                                            const SamplerRanges& ranges = {});

}  // namespace d2nn

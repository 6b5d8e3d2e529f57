#pragma once

// The diffractive base classifier: front end, a stack of phase-only layers,
// differential detectors, and exact reverse-mode gradients.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "d2nn/frontend.hpp"
#include "d2nn/optics.hpp"

namespace d2nn {

inline constexpr double kDefaultTemperature = 0.1;
inline constexpr double kDegenerateThreshold = 1e-20;
inline constexpr double kTrainingDenominatorFloor = 1e-12;

struct D2nnModel {
  OpticalProfile profile;
  FrontEndSpec front_end;
  std::vector<PhaseLayer> layers;
  std::vector<double> filter_latent;  // empty unless the front end is trainable
  DetectorLayout detectors;
  double temperature = kDefaultTemperature;

  /// Layers drawn uniformly from [0, 2pi) (rounded to float32) with `seed`;
  /// trainable-filter latents start at zero.
  static D2nnModel create(const FrontEndSpec& front_end, const OpticalProfile& profile, std::uint64_t seed,
                          double temperature = kDefaultTemperature);

  int class_count() const { return detectors.class_count(); }
  std::size_t parameter_count() const;
  void validate() const;
};

/// Temperature-scaled differential class scores.
struct ClassScores {
  std::vector<double> z;
};

/// How a vanishing detector pair (z+ + z- below kDegenerateThreshold) is
/// handled: evaluation raises, training floors the denominator, tolerant
/// scores that class 0.
enum class ScoreMode { Evaluate, Train, Tolerant };

/// Number of classes whose detector pair is below kDegenerateThreshold.
int degenerate_classes(std::span<const double> signals, const DetectorLayout& layout);

/// z_c = (z+ - z-) / (z+ + z-) / K, with signals in detector order.
ClassScores differential_scores(std::span<const double> signals, const DetectorLayout& layout, double temperature,
                                ScoreMode mode = ScoreMode::Evaluate);
/// Same formula for explicit (positive, negative) signal lists.
ClassScores differential_scores(std::span<const double> positive, std::span<const double> negative,
                                double temperature, ScoreMode mode = ScoreMode::Evaluate);

/// Softmax cross-entropy of one sample.
double d2nn_loss(const ClassScores& scores, int label);
/// dLoss/dz = softmax(z) - onehot(label).
std::vector<double> d2nn_loss_gradient(const ClassScores& scores, int label);
/// argmax with ties to the lowest class index.
int predicted_class(std::span<const double> scores);

struct ForwardResult {
  ClassScores scores;
  std::vector<double> signals;
};

struct GradientBundle {
  std::vector<std::vector<double>> layers;
  std::vector<double> latent;

  static GradientBundle zeros_like(const D2nnModel& model);
  void scale(double factor);
  void add(const GradientBundle& other);
  bool finite() const;
};

/// Precomputed kernels for one model geometry. Parameters are read from the
/// model passed to each call, so one engine serves a model under training.
class DiffractiveNetwork {
 public:
  explicit DiffractiveNetwork(const D2nnModel& model);

  /// exp(i phase) of every layer. Passing it to forward/backward skips the
  /// per-call evaluation; it goes stale when the phases change.
  using Phasors = std::vector<std::vector<Complex>>;
  static Phasors prepare(const D2nnModel& model);

  ForwardResult forward(const D2nnModel& model, std::span<const float> image,
                        ScoreMode mode = ScoreMode::Evaluate, const Phasors* phasors = nullptr) const;

  /// Returns the loss of one sample and adds `weight` * dLoss/dparams into
  /// `gradients`.
  double backward(const D2nnModel& model, std::span<const float> image, int label, GradientBundle& gradients,
                  double weight = 1.0, ScoreMode mode = ScoreMode::Evaluate, ForwardResult* result = nullptr,
                  const Phasors* phasors = nullptr) const;

 private:
  FrontEnd front_end_;
  Propagator to_first_layer_;
  Propagator between_layers_;
  Propagator to_detectors_;
};

ForwardResult forward(const D2nnModel& model, std::span<const float> image);
std::pair<double, GradientBundle> backward(const D2nnModel& model, std::span<const float> image, int label);

/// Binary checkpoint ("D2NN" magic, little-endian, float32 parameters,
/// trailing CRC-32).
inline constexpr std::uint32_t kCheckpointVersion = 1;
std::vector<std::uint8_t> serialize_model(const D2nnModel& model);
D2nnModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_checkpoint(const D2nnModel& model, const std::filesystem::path& path);
D2nnModel load_checkpoint(const std::filesystem::path& path);

}  // namespace d2nn

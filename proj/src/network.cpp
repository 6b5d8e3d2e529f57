#include "d2nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "d2nn/rng.hpp"

namespace d2nn {

D2nnModel D2nnModel::create(const FrontEndSpec& front_end, const OpticalProfile& profile, std::uint64_t seed,
                            double temperature) {
  front_end.validate(profile);
  Rng rng(seed);
  std::vector<PhaseLayer> layers;
  for (int l = 0; l < profile.layers; ++l) {
    PhaseLayer layer{profile.grid, std::vector<double>(profile.grid.size())};
    for (auto& p : layer.phase) p = static_cast<float>(rng.uniform(0.0, 2.0 * std::numbers::pi));
    layers.push_back(std::move(layer));
  }
  std::vector<double> latent;
  if (front_end.trainable()) latent.assign(profile.fourier_grid.size(), 0.0);
  D2nnModel model{profile, front_end, std::move(layers), std::move(latent),
                  DetectorLayout::lattice(profile.grid, profile.detector_width), temperature};
  model.validate();
  return model;
}

std::size_t D2nnModel::parameter_count() const {
  std::size_t n = filter_latent.size();
  for (const auto& l : layers) n += l.phase.size();
  return n;
}

void D2nnModel::validate() const {
  front_end.validate(profile);
  require(std::isfinite(temperature) && temperature > 0.0, ErrorKind::InvalidArgument, "temperature must be > 0");
  require(!layers.empty(), ErrorKind::InvalidArgument, "model has no diffractive layers");
  for (const auto& l : layers) {
    require(l.grid == profile.grid && l.phase.size() == profile.grid.size(), ErrorKind::GridMismatch,
            "phase layer does not match the model grid");
    for (double p : l.phase) require(std::isfinite(p), ErrorKind::Numeric, "non-finite phase value");
  }
  const std::size_t want_latent = front_end.trainable() ? profile.fourier_grid.size() : 0;
  require(filter_latent.size() == want_latent, ErrorKind::InvalidArgument, "filter latent has the wrong size");
  require(detectors.grid() == profile.grid, ErrorKind::GridMismatch, "detector layout does not match the grid");
}

// ---------------------------------------------------------------- scores

ClassScores differential_scores(std::span<const double> positive, std::span<const double> negative,
                                double temperature, ScoreMode mode) {
  require(positive.size() == negative.size(), ErrorKind::InvalidArgument, "signal lists differ in length");
  require(temperature > 0.0, ErrorKind::InvalidArgument, "temperature must be > 0");
  ClassScores out{std::vector<double>(positive.size())};
  for (std::size_t c = 0; c < positive.size(); ++c) {
    const double p = positive[c];
    const double n = negative[c];
    require(p >= 0.0 && n >= 0.0, ErrorKind::InvalidArgument, "detector signals must be nonnegative");
    double denom = p + n;
    if (denom < kDegenerateThreshold) {
      if (mode == ScoreMode::Evaluate) {
        fail(ErrorKind::Degenerate, "class " + std::to_string(c) + " receives no light at its detectors");
      }
      if (mode == ScoreMode::Tolerant) {
        out.z[c] = 0.0;
        continue;
      }
      denom = kTrainingDenominatorFloor;
    }
    out.z[c] = (p - n) / denom / temperature;
  }
  return out;
}

ClassScores differential_scores(std::span<const double> signals, const DetectorLayout& layout, double temperature,
                                ScoreMode mode) {
  require(signals.size() == layout.detectors().size(), ErrorKind::InvalidArgument, "signal count != detector count");
  const int classes = layout.class_count();
  std::vector<double> pos(classes), neg(classes);
  for (int c = 0; c < classes; ++c) {
    pos[c] = signals[layout.positive(c)];
    neg[c] = signals[layout.negative(c)];
  }
  return differential_scores(pos, neg, temperature, mode);
}

int degenerate_classes(std::span<const double> signals, const DetectorLayout& layout) {
  int count = 0;
  for (int c = 0; c < layout.class_count(); ++c) {
    if (signals[layout.positive(c)] + signals[layout.negative(c)] < kDegenerateThreshold) ++count;
  }
  return count;
}

namespace {

std::vector<double> softmax(std::span<const double> z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) sum += p[i] = std::exp(z[i] - zmax);
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace

double d2nn_loss(const ClassScores& scores, int label) {
  require(label >= 0 && static_cast<std::size_t>(label) < scores.z.size(), ErrorKind::InvalidArgument,
          "label out of range");
  const double zmax = *std::max_element(scores.z.begin(), scores.z.end());
  double sum = 0.0;
  for (double z : scores.z) sum += std::exp(z - zmax);
  return zmax + std::log(sum) - scores.z[label];
}

std::vector<double> d2nn_loss_gradient(const ClassScores& scores, int label) {
  require(label >= 0 && static_cast<std::size_t>(label) < scores.z.size(), ErrorKind::InvalidArgument,
          "label out of range");
  auto g = softmax(scores.z);
  g[label] -= 1.0;
  return g;
}

int predicted_class(std::span<const double> scores) {
  return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

// ---------------------------------------------------------------- gradients

GradientBundle GradientBundle::zeros_like(const D2nnModel& model) {
  GradientBundle g;
  for (const auto& l : model.layers) g.layers.emplace_back(l.phase.size(), 0.0);
  g.latent.assign(model.filter_latent.size(), 0.0);
  return g;
}

void GradientBundle::scale(double factor) {
  for (auto& l : layers) {
    for (auto& v : l) v *= factor;
  }
  for (auto& v : latent) v *= factor;
}

void GradientBundle::add(const GradientBundle& other) {
  require(other.layers.size() == layers.size() && other.latent.size() == latent.size(), ErrorKind::InvalidArgument,
          "gradient bundles differ in shape");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t i = 0; i < layers[l].size(); ++i) layers[l][i] += other.layers[l][i];
  }
  for (std::size_t i = 0; i < latent.size(); ++i) latent[i] += other.latent[i];
}

bool GradientBundle::finite() const {
  for (const auto& l : layers) {
    for (double v : l) {
      if (!std::isfinite(v)) return false;
    }
  }
  for (double v : latent) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------- engine

DiffractiveNetwork::DiffractiveNetwork(const D2nnModel& model)
    : front_end_(model.front_end, model.profile),
      to_first_layer_(model.profile.grid, model.profile.object_distance),
      between_layers_(model.profile.grid, model.profile.layer_spacing),
      to_detectors_(model.profile.grid, model.profile.detector_distance) {}

DiffractiveNetwork::Phasors DiffractiveNetwork::prepare(const D2nnModel& model) {
  Phasors out;
  for (const auto& l : model.layers) out.push_back(phasors(l));
  return out;
}

ForwardResult DiffractiveNetwork::forward(const D2nnModel& model, std::span<const float> image, ScoreMode mode,
                                          const Phasors* phasors) const {
  const Phasors local = phasors == nullptr ? prepare(model) : Phasors{};
  const Phasors& ph = phasors == nullptr ? local : *phasors;
  require(ph.size() == model.layers.size(), ErrorKind::InvalidArgument, "phasors do not match the model");
  ComplexField u = front_end_.apply(image, model.filter_latent);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    u = (l == 0 ? to_first_layer_ : between_layers_).forward(u);
    multiply_in_place(u, ph[l]);
  }
  u = to_detectors_.forward(u);
  ForwardResult result;
  result.signals = detector_readout(u, model.detectors);
  result.scores = differential_scores(result.signals, model.detectors, model.temperature, mode);
  return result;
}

double DiffractiveNetwork::backward(const D2nnModel& model, std::span<const float> image, int label,
                                    GradientBundle& gradients, double weight, ScoreMode mode,
                                    ForwardResult* result, const Phasors* phasors) const {
  const std::size_t depth = model.layers.size();
  const Phasors local = phasors == nullptr ? prepare(model) : Phasors{};
  const Phasors& ph = phasors == nullptr ? local : *phasors;
  require(ph.size() == depth, ErrorKind::InvalidArgument, "phasors do not match the model");
  require(gradients.layers.size() == depth && gradients.latent.size() == model.filter_latent.size(),
          ErrorKind::InvalidArgument, "gradient bundle does not match the model");

  // Forward pass, keeping each layer's output field.
  FrontEnd::Tape fe_tape;
  std::vector<ComplexField> layer_out;
  layer_out.reserve(depth);
  ComplexField u = front_end_.apply(image, model.filter_latent, front_end_.trainable() ? &fe_tape : nullptr);
  for (std::size_t l = 0; l < depth; ++l) {
    u = (l == 0 ? to_first_layer_ : between_layers_).forward(u);
    multiply_in_place(u, ph[l]);
    layer_out.push_back(u);
  }
  const ComplexField detector_field = to_detectors_.forward(u);
  ForwardResult fwd;
  fwd.signals = detector_readout(detector_field, model.detectors);
  fwd.scores = differential_scores(fwd.signals, model.detectors, model.temperature, mode);
  const double loss = d2nn_loss(fwd.scores, label);

  // Score -> signal: z = (p - n) / (K D), D = p + n (floored in training).
  const auto dz = d2nn_loss_gradient(fwd.scores, label);
  const DetectorLayout& layout = model.detectors;
  std::vector<double> dsignal(fwd.signals.size(), 0.0);
  for (int c = 0; c < layout.class_count(); ++c) {
    const double p = fwd.signals[layout.positive(c)];
    const double n = fwd.signals[layout.negative(c)];
    const double d = p + n;
    double dp, dn;
    if (d < kDegenerateThreshold) {
      dp = 1.0 / (model.temperature * kTrainingDenominatorFloor);
      dn = -dp;
    } else {
      dp = 2.0 * n / (model.temperature * d * d);
      dn = -2.0 * p / (model.temperature * d * d);
    }
    dsignal[layout.positive(c)] += weight * dz[c] * dp;
    dsignal[layout.negative(c)] += weight * dz[c] * dn;
  }

  // Signal -> detector-plane field: s = pitch^2 sum |w|^2.
  const double area = model.profile.grid.pitch * model.profile.grid.pitch;
  ComplexField g = ComplexField::zeros(model.profile.grid);
  for (std::size_t d = 0; d < dsignal.size(); ++d) {
    for (std::size_t i : layout.footprint(d)) g.values[i] = 2.0 * area * dsignal[d] * detector_field.values[i];
  }

  g = to_detectors_.adjoint(g);
  for (std::size_t l = depth; l-- > 0;) {
    const ComplexField& out = layer_out[l];
    auto& grad = gradients.layers[l];
    const auto& t = ph[l];
    for (std::size_t i = 0; i < g.values.size(); ++i) {
      grad[i] += std::imag(std::conj(out.values[i]) * g.values[i]);
      g.values[i] *= std::conj(t[i]);
    }
    g = (l == 0 ? to_first_layer_ : between_layers_).adjoint(g);
  }
  if (front_end_.trainable()) {
    // backward_latent accumulates; weight already folded into g.
    front_end_.backward_latent(fe_tape, g, model.filter_latent, gradients.latent);
  }

  if (result != nullptr) *result = std::move(fwd);
  return loss;
}

ForwardResult forward(const D2nnModel& model, std::span<const float> image) {
  return DiffractiveNetwork(model).forward(model, image);
}

std::pair<double, GradientBundle> backward(const D2nnModel& model, std::span<const float> image, int label) {
  GradientBundle g = GradientBundle::zeros_like(model);
  const double loss = DiffractiveNetwork(model).backward(model, image, label, g);
  return {loss, std::move(g)};
}

// ---------------------------------------------------------------- checkpoints

std::vector<std::uint8_t> serialize_model(const D2nnModel& model) {
  model.validate();
  detail::ByteWriter w;
  w.put_bytes({reinterpret_cast<const std::uint8_t*>("D2NN"), 4});
  w.put<std::uint32_t>(kCheckpointVersion);
  const OpticalProfile& p = model.profile;
  w.put<std::uint32_t>(p.grid.side);
  w.put<double>(p.grid.pitch);
  w.put_string(nlohmann::json(p).dump());
  w.put_string(nlohmann::json(model.front_end).dump());
  w.put<double>(model.temperature);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.class_count()));
  w.put<double>(model.detectors.width());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.detectors.detectors().size()));
  for (const auto& d : model.detectors.detectors()) {
    w.put<double>(d.cx);
    w.put<double>(d.cy);
    w.put<std::int32_t>(d.class_index);
    w.put<std::int32_t>(d.sign);
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& l : model.layers) w.put_floats(l.phase);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.filter_latent.size()));
  w.put_floats(model.filter_latent);
  w.seal();
  return std::move(w.bytes());
}

D2nnModel deserialize_model(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(detail::open_sealed(bytes, "D2NN", kCheckpointVersion));
  try {
    const auto side = r.get<std::uint32_t>();
    const auto pitch = r.get<double>();
    OpticalProfile profile = nlohmann::json::parse(r.get_string()).get<OpticalProfile>();
    require(profile.grid.side == static_cast<int>(side) && profile.grid.pitch == pitch, ErrorKind::Format,
            "checkpoint grid header disagrees with its profile");
    FrontEndSpec front_end = nlohmann::json::parse(r.get_string()).get<FrontEndSpec>();
    const double temperature = r.get<double>();
    const auto classes = static_cast<int>(r.get<std::uint32_t>());
    const double width = r.get<double>();
    const auto n_detectors = r.get<std::uint32_t>();
    std::vector<Detector> detectors(n_detectors);
    for (auto& d : detectors) {
      d.cx = r.get<double>();
      d.cy = r.get<double>();
      d.class_index = r.get<std::int32_t>();
      d.sign = r.get<std::int32_t>();
    }
    const auto n_layers = r.get<std::uint32_t>();
    std::vector<PhaseLayer> layers;
    for (std::uint32_t l = 0; l < n_layers; ++l) {
      layers.push_back(PhaseLayer{profile.grid, r.get_floats(profile.grid.size())});
    }
    const auto n_latent = r.get<std::uint32_t>();
    std::vector<double> latent = r.get_floats(n_latent);
    require(r.remaining() == 0, ErrorKind::Format, "trailing bytes in checkpoint");
    D2nnModel model{profile, front_end, std::move(layers), std::move(latent),
                    DetectorLayout(profile.grid, width, std::move(detectors), classes), temperature};
    model.validate();
    return model;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Format, std::string("checkpoint metadata is not valid JSON: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Format || e.kind() == ErrorKind::Checksum) throw;
    fail(ErrorKind::Format, std::string("checkpoint content is invalid: ") + e.what());
  }
}

void save_checkpoint(const D2nnModel& model, const std::filesystem::path& path) {
  detail::write_file_atomic(path, serialize_model(model));
}

D2nnModel load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  return deserialize_model(bytes);
}

}  // namespace d2nn

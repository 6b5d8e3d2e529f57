#include "d2nn/frontend.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "d2nn/rng.hpp"
#include "json_util.hpp"

namespace d2nn {
namespace {

using nlohmann::json;
constexpr double kPi = std::numbers::pi;

double gaussian(const FilterWindow& w, double x, double y) {
  const double dx = x - w.cx;
  const double dy = y - w.cy;
  return std::exp(-(dx * dx / (2.0 * w.sx * w.sx) + dy * dy / (2.0 * w.sy * w.sy)));
}

double square(const FilterWindow& w, double x, double y) {
  return (std::abs(x - w.cx) <= 0.5 * w.sx && std::abs(y - w.cy) <= 0.5 * w.sy) ? 1.0 : 0.0;
}

double raised_cosine(double d, double support, double a) {
  if (std::abs(d) > 0.5 * support) return 0.0;
  return a + (1.0 - a) * std::cos(2.0 * kPi * d / support);
}

double window_value(const ObjectFilterSpec& spec, double x, double y) {
  const auto& ws = spec.windows;
  switch (spec.family) {
    case ObjectFamily::Gaussian:
      return gaussian(ws[0], x, y);
    case ObjectFamily::MultiGaussian: {
      double sum = 0.0;
      for (const auto& w : ws) sum += gaussian(w, x, y);
      return std::min(1.0, sum);
    }
    case ObjectFamily::Hamming:
    case ObjectFamily::Hanning: {
      const double a = spec.family == ObjectFamily::Hamming ? 0.54 : 0.5;
      return raised_cosine(x - ws[0].cx, ws[0].sx, a) * raised_cosine(y - ws[0].cy, ws[0].sy, a);
    }
    case ObjectFamily::Square:
      return square(ws[0], x, y);
    case ObjectFamily::MultiSquare: {
      double sum = 0.0;
      for (const auto& w : ws) sum += square(w, x, y);
      return std::min(1.0, sum);
    }
    case ObjectFamily::RotatedPatch: {
      const auto& w = ws[0];
      const double dx = x - w.cx;
      const double dy = y - w.cy;
      const double u = dx * std::cos(w.angle) + dy * std::sin(w.angle);
      const double v = -dx * std::sin(w.angle) + dy * std::cos(w.angle);
      return (std::abs(u) <= 0.5 * w.sx && std::abs(v) <= 0.5 * w.sy) ? 1.0 : 0.0;
    }
    case ObjectFamily::Circle: {
      const double dx = x - ws[0].cx;
      const double dy = y - ws[0].cy;
      return dx * dx + dy * dy <= ws[0].sx * ws[0].sx ? 1.0 : 0.0;
    }
    case ObjectFamily::Grating:
      return 0.5 * (1.0 + std::cos(2.0 * kPi * (x * std::cos(spec.orientation) + y * std::sin(spec.orientation)) /
                                   spec.period));
    case ObjectFamily::ZonePlate: {
      const double dx = x - ws[0].cx;
      const double dy = y - ws[0].cy;
      return std::cos(kPi * (dx * dx + dy * dy) / spec.zone_focal) > 0.0 ? 1.0 : 0.0;
    }
    case ObjectFamily::GaussianPlusSquare:
      return std::min(1.0, gaussian(ws[0], x, y) + square(ws[1], x, y));
  }
  return 0.0;
}

constexpr std::array<std::pair<ObjectFamily, const char*>, 11> kFamilyNames{{
    {ObjectFamily::Gaussian, "gaussian"},
    {ObjectFamily::MultiGaussian, "multi_gaussian"},
    {ObjectFamily::Hamming, "hamming"},
    {ObjectFamily::Hanning, "hanning"},
    {ObjectFamily::Square, "square"},
    {ObjectFamily::MultiSquare, "multi_square"},
    {ObjectFamily::RotatedPatch, "rotated_patch"},
    {ObjectFamily::Circle, "circle"},
    {ObjectFamily::Grating, "grating"},
    {ObjectFamily::ZonePlate, "zone_plate"},
    {ObjectFamily::GaussianPlusSquare, "gaussian_plus_square"},
}};

bool finite_positive(double v) { return std::isfinite(v) && v > 0.0; }

double logistic(double latent) {
  const double l = std::clamp(latent, -30.0, 30.0);
  return 1.0 / (1.0 + std::exp(-l));
}

}  // namespace

// ---------------------------------------------------------------- profiles

OpticalProfile OpticalProfile::paper() {
  OpticalProfile p;
  p.name = "paper";
  p.grid = {128, 0.5};
  p.replication = 2;
  p.fourier_grid = {256, 0.5};
  p.detector_width = 6.4;
  return p;
}

OpticalProfile OpticalProfile::desk() { return OpticalProfile{}; }

OpticalProfile OpticalProfile::named(const std::string& name) {
  if (name == "paper") return paper();
  if (name == "desk") return desk();
  fail(ErrorKind::Config, "unknown profile '" + name + "' (expected paper or desk)");
}

void OpticalProfile::validate() const {
  grid.validate();
  fourier_grid.validate();
  require(replication >= 1, ErrorKind::InvalidArgument, "replication must be >= 1");
  require(object_side() <= grid.side, ErrorKind::InvalidArgument, "object region exceeds the grid");
  require(fourier_grid.side >= grid.side && fourier_grid.pitch == grid.pitch, ErrorKind::InvalidArgument,
          "4-f grid must share the pitch and be at least as wide as the network grid");
  require(layers >= 1, ErrorKind::InvalidArgument, "at least one diffractive layer is required");
  require(object_distance >= 0.0 && layer_spacing >= 0.0 && detector_distance >= 0.0,
          ErrorKind::InvalidArgument, "distances must be >= 0");
  require(finite_positive(detector_width), ErrorKind::InvalidArgument, "detector width must be positive");
}

// ---------------------------------------------------------------- validation

void EncodingSpec::validate() const {
  if (channel == Channel::Phase) {
    require(finite_positive(phase_range) && phase_range <= 2.0 * kPi + 1e-12, ErrorKind::InvalidArgument,
            "phase range must lie in (0, 2pi]");
  } else {
    require(phase_range == 0.0, ErrorKind::InvalidArgument, "amplitude encoding takes no phase range");
  }
}

void ObjectFilterSpec::validate() const {
  std::size_t expected_min = 1;
  std::size_t expected_max = 1;
  switch (family) {
    case ObjectFamily::MultiGaussian:
    case ObjectFamily::MultiSquare:
      expected_max = 16;
      break;
    case ObjectFamily::GaussianPlusSquare:
      expected_min = expected_max = 2;
      break;
    case ObjectFamily::Grating:
      expected_min = expected_max = 0;
      require(finite_positive(period), ErrorKind::InvalidArgument, "grating period must be positive");
      require(std::isfinite(orientation), ErrorKind::InvalidArgument, "grating orientation must be finite");
      break;
    case ObjectFamily::ZonePlate:
      require(finite_positive(zone_focal), ErrorKind::InvalidArgument, "zone-plate focal must be positive");
      break;
    default:
      break;
  }
  require(windows.size() >= expected_min && windows.size() <= expected_max, ErrorKind::InvalidArgument,
          "filter family " + to_string(family) + " has the wrong number of windows");
  for (const auto& w : windows) {
    require(std::isfinite(w.cx) && std::isfinite(w.cy) && std::isfinite(w.angle), ErrorKind::InvalidArgument,
            "filter window position must be finite");
    require(finite_positive(w.sx) && finite_positive(w.sy), ErrorKind::InvalidArgument,
            "filter window extents must be positive");
  }
}

void FourierFilterSpec::validate() const {
  if (kind == FourierKind::Trainable) return;
  require(ring_edges.size() >= 2, ErrorKind::InvalidArgument, "annular filter needs at least two ring edges");
  require(ring_pass.size() + 1 == ring_edges.size(), ErrorKind::InvalidArgument,
          "annular filter needs one pass flag per ring");
  require(std::isfinite(ring_edges.front()) && ring_edges.front() >= 0.0, ErrorKind::InvalidArgument,
          "first ring edge must be finite and >= 0");
  for (std::size_t i = 1; i < ring_edges.size(); ++i) {
    require(ring_edges[i] > ring_edges[i - 1], ErrorKind::InvalidArgument, "ring edges must be strictly ascending");
  }
}

bool FrontEndSpec::trainable() const {
  const auto* f = std::get_if<FourierPlacement>(&placement);
  return f != nullptr && f->filter.kind == FourierKind::Trainable;
}

void FrontEndSpec::validate(const OpticalProfile& profile) const {
  profile.validate();
  encoding.validate();
  if (const auto* obj = std::get_if<ObjectFilterSpec>(&placement)) {
    obj->validate();
    return;
  }
  const auto& f = std::get<FourierPlacement>(placement);
  f.filter.validate();
  require(f.aperture_scale == 1.0 || f.aperture_scale == 1.5, ErrorKind::InvalidArgument,
          "output aperture scale must be 1.0 or 1.5");
  require(finite_positive(f.focal_length), ErrorKind::InvalidArgument, "focal length must be positive");
  require(finite_positive(f.lens_diameter) && f.lens_diameter <= profile.fourier_grid.extent(),
          ErrorKind::InvalidArgument, "lens aperture does not fit the 4-f grid");
  require(f.aperture_scale * profile.object_extent() <= profile.grid.extent(), ErrorKind::InvalidArgument,
          "output aperture does not fit the network grid");
}

// ---------------------------------------------------------------- json

std::string to_string(ObjectFamily family) {
  for (const auto& [f, name] : kFamilyNames) {
    if (f == family) return name;
  }
  return "unknown";
}

ObjectFamily object_family_from_string(const std::string& name) {
  for (const auto& [f, n] : kFamilyNames) {
    if (name == n) return f;
  }
  fail(ErrorKind::Config, "unknown object filter family '" + name + "'");
}

void to_json(json& j, const OpticalProfile& p) {
  j = json{{"name", p.name},
           {"grid_side", p.grid.side},
           {"pitch", p.grid.pitch},
           {"replication", p.replication},
           {"fourier_grid_side", p.fourier_grid.side},
           {"detector_width", p.detector_width},
           {"object_distance", p.object_distance},
           {"layer_spacing", p.layer_spacing},
           {"detector_distance", p.detector_distance},
           {"layers", p.layers}};
}

void from_json(const json& j, OpticalProfile& p) {
  jsonutil::check_keys(j, {"name", "grid_side", "pitch", "replication", "fourier_grid_side", "detector_width",
                           "object_distance", "layer_spacing", "detector_distance", "layers"},
                       "profile");
  p = OpticalProfile::named(j.value("name", std::string("desk")));
  p.grid.side = j.value("grid_side", p.grid.side);
  p.grid.pitch = j.value("pitch", p.grid.pitch);
  p.replication = j.value("replication", p.replication);
  p.fourier_grid = {j.value("fourier_grid_side", p.fourier_grid.side), p.grid.pitch};
  p.detector_width = j.value("detector_width", p.detector_width);
  p.object_distance = j.value("object_distance", p.object_distance);
  p.layer_spacing = j.value("layer_spacing", p.layer_spacing);
  p.detector_distance = j.value("detector_distance", p.detector_distance);
  p.layers = j.value("layers", p.layers);
}

void to_json(json& j, const FrontEndSpec& spec) {
  json enc = {{"channel", spec.encoding.channel == Channel::Phase ? "phase" : "amplitude"}};
  if (spec.encoding.channel == Channel::Phase) enc["phase_range"] = spec.encoding.phase_range;
  j = json{{"encoding", enc}};
  if (const auto* obj = std::get_if<ObjectFilterSpec>(&spec.placement)) {
    json windows = json::array();
    for (const auto& w : obj->windows) {
      windows.push_back({{"cx", w.cx}, {"cy", w.cy}, {"sx", w.sx}, {"sy", w.sy}, {"angle", w.angle}});
    }
    j["placement"] = "object";
    j["object_filter"] = {{"family", to_string(obj->family)},
                          {"windows", windows},
                          {"period", obj->period},
                          {"orientation", obj->orientation},
                          {"zone_focal", obj->zone_focal}};
  } else {
    const auto& f = std::get<FourierPlacement>(spec.placement);
    json filter = {{"kind", f.filter.kind == FourierKind::Trainable ? "trainable" : "annular"}};
    if (f.filter.kind == FourierKind::Annular) {
      json edges = json::array();
      for (double e : f.filter.ring_edges) {
        if (std::isinf(e)) {
          edges.push_back("inf");
        } else {
          edges.push_back(e);
        }
      }
      filter["ring_edges"] = edges;
      filter["ring_pass"] = f.filter.ring_pass;
    }
    j["placement"] = "fourier";
    j["fourier_filter"] = filter;
    j["aperture_scale"] = f.aperture_scale;
    j["focal_length"] = f.focal_length;
    j["lens_diameter"] = f.lens_diameter;
  }
}

void from_json(const json& j, FrontEndSpec& spec) {
  jsonutil::check_keys(j, {"encoding", "placement", "object_filter", "fourier_filter", "aperture_scale",
                           "focal_length", "lens_diameter"},
                       "front_end");
  const json& enc = j.at("encoding");
  jsonutil::check_keys(enc, {"channel", "phase_range"}, "encoding");
  const std::string channel = enc.at("channel").get<std::string>();
  if (channel == "phase") {
    spec.encoding = {Channel::Phase, enc.at("phase_range").get<double>()};
  } else if (channel == "amplitude") {
    spec.encoding = {Channel::Amplitude, 0.0};
  } else {
    fail(ErrorKind::Config, "unknown encoding channel '" + channel + "'");
  }

  const std::string placement = j.at("placement").get<std::string>();
  if (placement == "object") {
    const json& f = j.at("object_filter");
    jsonutil::check_keys(f, {"family", "windows", "period", "orientation", "zone_focal"}, "object_filter");
    ObjectFilterSpec obj;
    obj.family = object_family_from_string(f.at("family").get<std::string>());
    for (const auto& w : f.value("windows", json::array())) {
      jsonutil::check_keys(w, {"cx", "cy", "sx", "sy", "angle"}, "filter window");
      obj.windows.push_back(FilterWindow{w.value("cx", 0.0), w.value("cy", 0.0), w.value("sx", 1.0),
                                         w.value("sy", 1.0), w.value("angle", 0.0)});
    }
    obj.period = f.value("period", 0.0);
    obj.orientation = f.value("orientation", 0.0);
    obj.zone_focal = f.value("zone_focal", 0.0);
    spec.placement = obj;
  } else if (placement == "fourier") {
    FourierPlacement fp;
    const json& f = j.at("fourier_filter");
    jsonutil::check_keys(f, {"kind", "ring_edges", "ring_pass"}, "fourier_filter");
    const std::string kind = f.at("kind").get<std::string>();
    if (kind == "trainable") {
      fp.filter.kind = FourierKind::Trainable;
    } else if (kind == "annular") {
      fp.filter.kind = FourierKind::Annular;
      for (const auto& e : f.at("ring_edges")) {
        fp.filter.ring_edges.push_back(e.is_string() && e.get<std::string>() == "inf"
                                           ? std::numeric_limits<double>::infinity()
                                           : e.get<double>());
      }
      fp.filter.ring_pass = f.at("ring_pass").get<std::vector<bool>>();
    } else {
      fail(ErrorKind::Config, "unknown Fourier filter kind '" + kind + "'");
    }
    fp.aperture_scale = j.value("aperture_scale", 1.0);
    fp.focal_length = j.value("focal_length", 145.6);
    fp.lens_diameter = j.value("lens_diameter", 104.0);
    spec.placement = fp;
  } else {
    fail(ErrorKind::Config, "unknown placement '" + placement + "'");
  }
}

// ---------------------------------------------------------------- masks

ComplexField encode_input(std::span<const float> image, const EncodingSpec& enc, const GridSpec& grid,
                          int replication) {
  require(image.size() == kImagePixels, ErrorKind::InvalidArgument, "image must be 32x32");
  enc.validate();
  const int object_side = kImageSide * replication;
  require(replication >= 1 && object_side <= grid.side, ErrorKind::InvalidArgument,
          "object region does not fit the grid");
  for (float g : image) {
    require(g >= 0.0f && g <= 1.0f, ErrorKind::InvalidArgument, "image values must lie in [0, 1]");
  }

  ComplexField field = ComplexField::zeros(grid);
  const int offset = (grid.side - object_side) / 2;
  for (int r = 0; r < object_side; ++r) {
    for (int c = 0; c < object_side; ++c) {
      const double g = image[static_cast<std::size_t>(r / replication) * kImageSide + c / replication];
      field.at(r + offset, c + offset) =
          enc.channel == Channel::Amplitude ? Complex(g, 0.0) : std::polar(1.0, g * enc.phase_range);
    }
  }
  return field;
}

AmplitudeMask make_object_filter(const ObjectFilterSpec& spec, const GridSpec& grid, int object_side) {
  spec.validate();
  grid.validate();
  require(object_side >= 1 && object_side <= grid.side, ErrorKind::InvalidArgument,
          "object region does not fit the grid");
  AmplitudeMask mask{grid, std::vector<double>(grid.size())};
  const int offset = (grid.side - object_side) / 2;
  for (int r = offset; r < offset + object_side; ++r) {
    for (int c = offset; c < offset + object_side; ++c) {
      const double v = window_value(spec, grid.coord(c), grid.coord(r));
      mask.amplitude[static_cast<std::size_t>(r) * grid.side + c] = std::clamp(v, 0.0, 1.0);
    }
  }
  return mask;
}

AmplitudeMask make_fourier_filter(const FourierFilterSpec& spec, const GridSpec& grid,
                                  std::span<const double> latent) {
  spec.validate();
  grid.validate();
  AmplitudeMask mask{grid, std::vector<double>(grid.size())};
  if (spec.kind == FourierKind::Trainable) {
    require(latent.size() == grid.size(), ErrorKind::InvalidArgument, "trainable filter latent has the wrong size");
    for (std::size_t i = 0; i < latent.size(); ++i) mask.amplitude[i] = logistic(latent[i]);
    return mask;
  }
  for (int r = 0; r < grid.side; ++r) {
    for (int c = 0; c < grid.side; ++c) {
      const double rho = std::hypot(grid.coord(c), grid.coord(r));
      double v = 0.0;
      for (std::size_t ring = 0; ring < spec.ring_pass.size(); ++ring) {
        if (rho >= spec.ring_edges[ring] && rho < spec.ring_edges[ring + 1]) {
          v = spec.ring_pass[ring] ? 1.0 : 0.0;
          break;
        }
      }
      mask.amplitude[static_cast<std::size_t>(r) * grid.side + c] = v;
    }
  }
  return mask;
}

AmplitudeMask square_aperture(const GridSpec& grid, double side) {
  grid.validate();
  AmplitudeMask mask{grid, std::vector<double>(grid.size())};
  const double h = 0.5 * side;
  auto inside = [&](double v) { return v >= -h - 1e-9 && v < h - 1e-9; };
  for (int r = 0; r < grid.side; ++r) {
    for (int c = 0; c < grid.side; ++c) {
      if (inside(grid.coord(r)) && inside(grid.coord(c))) {
        mask.amplitude[static_cast<std::size_t>(r) * grid.side + c] = 1.0;
      }
    }
  }
  return mask;
}

// ---------------------------------------------------------------- front end

FrontEnd::FrontEnd(const FrontEndSpec& spec, const OpticalProfile& profile) : spec_(spec), profile_(profile) {
  spec_.validate(profile_);
  if (const auto* obj = std::get_if<ObjectFilterSpec>(&spec_.placement)) {
    object_mask_ = make_object_filter(*obj, profile_.grid, profile_.object_side());
    return;
  }
  const auto& f = std::get<FourierPlacement>(spec_.placement);
  focal_hop_.emplace(profile_.fourier_grid, f.focal_length);
  auto [phase, aperture] = lens_phase(f.focal_length, f.lens_diameter, profile_.fourier_grid);
  lens_.resize(phase.phase.size());
  for (std::size_t i = 0; i < lens_.size(); ++i) lens_[i] = aperture.amplitude[i] * std::polar(1.0, phase.phase[i]);
  if (f.filter.kind == FourierKind::Annular) fourier_mask_ = make_fourier_filter(f.filter, profile_.fourier_grid);
  output_aperture_ = square_aperture(profile_.fourier_grid, f.aperture_scale * profile_.object_extent());
}

ComplexField FrontEnd::crop_to_network(const ComplexField& field) const {
  const int n = profile_.grid.side;
  const int offset = (field.grid.side - n) / 2;
  ComplexField out = ComplexField::zeros(profile_.grid);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) out.at(r, c) = field.at(r + offset, c + offset);
  }
  return out;
}

ComplexField FrontEnd::embed_in_fourier(const ComplexField& field) const {
  const int n = profile_.grid.side;
  const int offset = (profile_.fourier_grid.side - n) / 2;
  ComplexField out = ComplexField::zeros(profile_.fourier_grid);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) out.at(r + offset, c + offset) = field.at(r, c);
  }
  return out;
}

namespace {

// Thin lens with its circular pupil, or its adjoint.
void apply_lens(ComplexField& u, const std::vector<Complex>& lens, bool adjoint) {
  for (std::size_t i = 0; i < u.values.size(); ++i) u.values[i] *= adjoint ? std::conj(lens[i]) : lens[i];
}

void multiply(ComplexField& u, const AmplitudeMask& mask) {
  for (std::size_t i = 0; i < u.values.size(); ++i) u.values[i] *= mask.amplitude[i];
}

}  // namespace

ComplexField FrontEnd::apply(std::span<const float> image, std::span<const double> latent, Tape* tape) const {
  if (!spec_.fourier()) {
    ComplexField u = encode_input(image, spec_.encoding, profile_.grid, profile_.replication);
    multiply(u, object_mask_);
    return u;
  }

  ComplexField u = encode_input(image, spec_.encoding, profile_.fourier_grid, profile_.replication);
  u = focal_hop_->forward(u);
  apply_lens(u, lens_, false);
  u = focal_hop_->forward(u);
  if (tape != nullptr) tape->filter_input = u;
  if (trainable()) {
    require(latent.size() == latent_size(), ErrorKind::InvalidArgument, "trainable filter latent has the wrong size");
    for (std::size_t i = 0; i < u.values.size(); ++i) u.values[i] *= logistic(latent[i]);
  } else {
    multiply(u, fourier_mask_);
  }
  u = focal_hop_->forward(u);
  apply_lens(u, lens_, false);
  u = focal_hop_->forward(u);
  multiply(u, output_aperture_);
  return crop_to_network(u);
}

void FrontEnd::backward_latent(const Tape& tape, const ComplexField& cotangent, std::span<const double> latent,
                               std::span<double> grad_latent) const {
  if (!trainable()) return;
  require(latent.size() == latent_size() && grad_latent.size() == latent_size(), ErrorKind::InvalidArgument,
          "trainable filter gradient has the wrong size");
  ComplexField g = embed_in_fourier(cotangent);
  multiply(g, output_aperture_);
  g = focal_hop_->adjoint(g);
  apply_lens(g, lens_, true);
  g = focal_hop_->adjoint(g);
  // y = a(latent) * x  =>  dL/da = Re(conj(g_y) x), da/dlatent = a (1 - a).
  for (std::size_t i = 0; i < g.values.size(); ++i) {
    const double a = logistic(latent[i]);
    const double dl_da = std::real(std::conj(g.values[i]) * tape.filter_input.values[i]);
    grad_latent[i] += dl_da * a * (1.0 - a);
  }
}

ComplexField apply_front_end(std::span<const float> image, const FrontEndSpec& spec, const OpticalProfile& profile,
                             std::span<const double> latent) {
  return FrontEnd(spec, profile).apply(image, latent);
}

// ---------------------------------------------------------------- sampler

PoolCounts PoolCounts::proportional(int total) {
  require(total >= 0, ErrorKind::InvalidArgument, "pool size must be >= 0");
  constexpr std::array<int, 4> kPaper{276, 64, 656, 256};
  constexpr int kPaperTotal = 1252;
  std::array<int, 4> counts{};
  std::array<std::pair<long, int>, 4> remainders{};
  int assigned = 0;
  for (int i = 0; i < 4; ++i) {
    const long scaled = static_cast<long>(kPaper[i]) * total;
    counts[i] = static_cast<int>(scaled / kPaperTotal);
    remainders[i] = {scaled % kPaperTotal, -i};
    assigned += counts[i];
  }
  std::sort(remainders.rbegin(), remainders.rend());
  for (int k = 0; assigned < total; ++k, ++assigned) ++counts[-remainders[k].second];
  return {counts[0], counts[1], counts[2], counts[3]};
}

namespace {

FilterWindow random_window(Rng& rng, double half_extent, double lo, double hi) {
  FilterWindow w;
  w.cx = rng.uniform(-half_extent, half_extent);
  w.cy = rng.uniform(-half_extent, half_extent);
  w.sx = rng.uniform(lo, hi);
  w.sy = rng.uniform(lo, hi);
  return w;
}

ObjectFilterSpec random_object_filter(Rng& rng, const OpticalProfile& profile, const SamplerRanges& r) {
  const double half = 0.5 * profile.object_extent();
  ObjectFilterSpec spec;
  spec.family = kFamilyNames[rng.below(kFamilyNames.size())].first;
  switch (spec.family) {
    case ObjectFamily::Gaussian:
      spec.windows = {random_window(rng, half, r.sigma_min, r.sigma_max)};
      break;
    case ObjectFamily::MultiGaussian: {
      const auto n = 2 + rng.below(3);
      for (std::uint64_t i = 0; i < n; ++i) spec.windows.push_back(random_window(rng, half, r.sigma_min, r.sigma_max));
      break;
    }
    case ObjectFamily::Hamming:
    case ObjectFamily::Hanning:
    case ObjectFamily::Square:
      spec.windows = {random_window(rng, half, r.window_min, r.window_max)};
      break;
    case ObjectFamily::MultiSquare: {
      const auto n = 2 + rng.below(3);
      for (std::uint64_t i = 0; i < n; ++i) {
        spec.windows.push_back(random_window(rng, half, r.window_min, r.window_max));
      }
      break;
    }
    case ObjectFamily::RotatedPatch: {
      FilterWindow w = random_window(rng, half, r.window_min, r.window_max);
      w.angle = rng.uniform(0.0, kPi);
      spec.windows = {w};
      break;
    }
    case ObjectFamily::Circle: {
      FilterWindow w = random_window(rng, half, 0.5 * r.window_min, 0.5 * r.window_max);
      w.sy = w.sx;
      spec.windows = {w};
      break;
    }
    case ObjectFamily::Grating:
      spec.period = rng.uniform(r.period_min, r.period_max);
      spec.orientation = rng.uniform(0.0, kPi);
      break;
    case ObjectFamily::ZonePlate: {
      FilterWindow w = random_window(rng, half, 1.0, 1.0);
      spec.windows = {w};
      spec.zone_focal = rng.uniform(r.zone_focal_min, r.zone_focal_max);
      break;
    }
    case ObjectFamily::GaussianPlusSquare:
      spec.windows = {random_window(rng, half, r.sigma_min, r.sigma_max),
                      random_window(rng, half, r.window_min, r.window_max)};
      break;
  }
  return spec;
}

FourierFilterSpec random_fourier_filter(Rng& rng, double lens_radius, const SamplerRanges& r) {
  FourierFilterSpec spec;
  if (rng.bernoulli(0.5)) {
    spec.kind = FourierKind::Trainable;
    return spec;
  }
  spec.kind = FourierKind::Annular;
  for (int i = 0; i <= r.annular_rings; ++i) spec.ring_edges.push_back(lens_radius * i / r.annular_rings);
  bool any = false;
  while (!any) {
    spec.ring_pass.clear();
    for (int i = 0; i < r.annular_rings; ++i) {
      const bool pass = rng.bernoulli(0.5);
      any = any || pass;
      spec.ring_pass.push_back(pass);
    }
  }
  return spec;
}

double uniform_object_transmission(const ObjectFilterSpec& spec, const OpticalProfile& profile) {
  const AmplitudeMask mask = make_object_filter(spec, profile.grid, profile.object_side());
  double sum = 0.0;
  for (double a : mask.amplitude) sum += a * a;
  return sum / (static_cast<double>(profile.object_side()) * profile.object_side());
}

}  // namespace

std::vector<FrontEndSpec> sample_pool_specs(std::uint64_t seed, const PoolCounts& counts,
                                            const OpticalProfile& profile, const SamplerRanges& ranges) {
  require(counts.amplitude_object >= 0 && counts.amplitude_fourier >= 0 && counts.phase_object >= 0 &&
              counts.phase_fourier >= 0,
          ErrorKind::InvalidArgument, "pool counts must be >= 0");
  profile.validate();
  constexpr std::array<double, 4> kPhaseRanges{0.5 * kPi, kPi, 1.5 * kPi, 2.0 * kPi};
  const FourierPlacement defaults;

  Rng rng(seed);
  std::vector<FrontEndSpec> specs;
  std::set<std::string> seen;
  auto emit = [&](Channel channel, bool fourier) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      FrontEndSpec spec;
      spec.encoding.channel = channel;
      if (channel == Channel::Phase) spec.encoding.phase_range = kPhaseRanges[rng.below(kPhaseRanges.size())];
      if (fourier) {
        FourierPlacement fp;
        fp.filter = random_fourier_filter(rng, 0.5 * defaults.lens_diameter, ranges);
        fp.aperture_scale = rng.bernoulli(0.5) ? 1.5 : 1.0;
        spec.placement = fp;
      } else {
        ObjectFilterSpec obj = random_object_filter(rng, profile, ranges);
        if (uniform_object_transmission(obj, profile) < ranges.min_transmission) continue;
        spec.placement = obj;
      }
      if (seen.insert(nlohmann::json(spec).dump()).second) {
        specs.push_back(std::move(spec));
        return;
      }
    }
    fail(ErrorKind::InvalidArgument, "could not draw a distinct front-end spec");
  };

  for (int i = 0; i < counts.amplitude_object; ++i) emit(Channel::Amplitude, false);
  for (int i = 0; i < counts.amplitude_fourier; ++i) emit(Channel::Amplitude, true);
  for (int i = 0; i < counts.phase_object; ++i) emit(Channel::Phase, false);
  for (int i = 0; i < counts.phase_fourier; ++i) emit(Channel::Phase, true);
  return specs;
}

}  // namespace d2nn

#include "trajmine/scene_features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "trajmine/errors.hpp"
#include "text_io.hpp"

namespace trajmine {

namespace {

constexpr std::string_view kFeatureMagic = "TRAJMINE-FEAT-1";

// Per-frame state of one vehicle over a feature window; frames where the
// vehicle is absent have present == 0.
struct Kinematics {
  std::vector<std::uint8_t> present;
  std::vector<double> pos_long;
  std::vector<double> vel_lat, vel_long;
  std::vector<double> acc_lat, acc_long;
};

// Central differences inside a run, one-sided at the run edges.
void differentiate(std::span<const double> x, std::span<double> dx) {
  const std::size_t n = x.size();
  if (n == 1) {
    dx[0] = 0.0;
    return;
  }
  dx[0] = (x[1] - x[0]) * kFrameRateHz;
  dx[n - 1] = (x[n - 1] - x[n - 2]) * kFrameRateHz;
  for (std::size_t k = 1; k + 1 < n; ++k) dx[k] = (x[k + 1] - x[k - 1]) * (0.5 * kFrameRateHz);
}

Kinematics kinematics(const SceneIndex& scene, VehicleId id, const FeatureWindow& window) {
  const std::size_t n = window.frames();
  Kinematics k;
  k.present.assign(n, 0);
  k.pos_long.assign(n, 0.0);
  k.vel_lat.assign(n, 0.0);
  k.vel_long.assign(n, 0.0);
  k.acc_lat.assign(n, 0.0);
  k.acc_long.assign(n, 0.0);
  std::vector<double> pos_lat(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (const auto* p = scene.point(id, window.begin + static_cast<FrameIndex>(i))) {
      k.present[i] = 1;
      k.pos_long[i] = p->longitudinal_pos;
      pos_lat[i] = p->lateral_pos;
    }
  }
  std::size_t i = 0;
  while (i < n) {
    if (!k.present[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && k.present[j]) ++j;
    const std::size_t len = j - i;
    // A single isolated frame carries no motion information.
    if (len == 1) {
      k.present[i] = 0;
    } else {
      differentiate(std::span<const double>(pos_lat).subspan(i, len), std::span(k.vel_lat).subspan(i, len));
      differentiate(std::span<const double>(k.pos_long).subspan(i, len), std::span(k.vel_long).subspan(i, len));
      differentiate(std::span<const double>(k.vel_lat).subspan(i, len), std::span(k.acc_lat).subspan(i, len));
      differentiate(std::span<const double>(k.vel_long).subspan(i, len), std::span(k.acc_long).subspan(i, len));
    }
    i = j;
  }
  return k;
}

double segment_mean(std::span<const double> v, const FrameRange& seg) {
  double s = 0.0;
  for (std::size_t i = seg.begin; i < seg.end; ++i) s += v[i];
  return s / static_cast<double>(seg.size());
}

std::optional<VehicleId> nearest_ahead(const SceneIndex& scene, const TrajectoryPoint& tv,
                                       VehicleId target, FrameIndex t_frame, int lane) {
  std::optional<VehicleId> best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (const auto ti : scene.present_at(t_frame)) {
    const auto& track = scene.tracks()[ti];
    if (track.vehicle_id == target) continue;
    const auto* p = track.at(t_frame);
    if (p->lane_id != lane) continue;
    const double gap = p->longitudinal_pos - tv.longitudinal_pos;
    if (gap <= 0.0) continue;
    if (gap < best_gap || (gap == best_gap && track.vehicle_id < *best)) {
      best_gap = gap;
      best = track.vehicle_id;
    }
  }
  return best;
}

bool is_integral(double x) { return std::abs(x - std::round(x)) < 1e-9; }

}  // namespace

std::string to_string(Scope scope) { return scope == Scope::X ? "X" : "Z"; }

Scope parse_scope(const std::string& text) {
  if (text == "X" || text == "x") return Scope::X;
  if (text == "Z" || text == "z") return Scope::Z;
  throw ArgumentError("unknown scope '" + text + "'");
}

PartitionScheme PartitionScheme::parse(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ArgumentError("scheme must look like fixsegnum:5 or fixseglen:1.4");
  std::string mode = text.substr(0, colon);
  std::transform(mode.begin(), mode.end(), mode.begin(), [](unsigned char c) { return std::tolower(c); });
  PartitionScheme s;
  if (mode == "fixsegnum") {
    s.mode = PartitionMode::fix_seg_num;
  } else if (mode == "fixseglen") {
    s.mode = PartitionMode::fix_seg_len;
  } else {
    throw ArgumentError("unknown partition mode '" + mode + "'");
  }
  const std::string value = text.substr(colon + 1);
  const auto res = std::from_chars(value.data(), value.data() + value.size(), s.kappa);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size() || !(s.kappa > 0.0)) {
    throw ArgumentError("invalid kappa '" + value + "'");
  }
  if (s.mode == PartitionMode::fix_seg_num && (!is_integral(s.kappa) || s.kappa < 1.0)) {
    throw ArgumentError("FixSegNum kappa must be an integer >= 1");
  }
  return s;
}

std::string PartitionScheme::to_string() const {
  return (mode == PartitionMode::fix_seg_num ? "fixsegnum:" : "fixseglen:") + detail::format_double(kappa);
}

FeatureWindow scope_window(const Example& example, Scope scope) {
  return {example.window_begin(), scope == Scope::X ? example.t_frame : example.window_end()};
}

double scope_length_seconds(Scope scope) {
  return static_cast<double>(scope == Scope::X ? kHistoryFrames : kTrajectoryFrames) * kFramePeriod;
}

SceneFactors assign_scene_factors(const Example& example, const SceneIndex& scene,
                                  const FeatureWindow& window) {
  SceneFactors f;
  const TrajectoryPoint& tv = example.history_frames.back();
  const FrameIndex t = example.t_frame;
  auto keep = [&](std::optional<VehicleId> id) -> std::optional<VehicleId> {
    if (id && scene.present_throughout(*id, window.begin, window.end)) return id;
    return std::nullopt;
  };
  f.lf_id = keep(nearest_ahead(scene, tv, example.target_id, t, tv.lane_id - 1));
  f.cf_id = keep(nearest_ahead(scene, tv, example.target_id, t, tv.lane_id));
  f.rf_id = keep(nearest_ahead(scene, tv, example.target_id, t, tv.lane_id + 1));

  for (const auto ti : scene.present_at(t)) {
    const auto& track = scene.tracks()[ti];
    const auto id = track.vehicle_id;
    if (id == example.target_id || id == f.lf_id || id == f.cf_id || id == f.rf_id) continue;
    if (std::abs(track.at(t)->longitudinal_pos - tv.longitudinal_pos) <= kOtherVehicleRadius) {
      f.ot_ids.push_back(id);
    }
  }
  std::sort(f.ot_ids.begin(), f.ot_ids.end());
  f.ot_ids.erase(std::unique(f.ot_ids.begin(), f.ot_ids.end()), f.ot_ids.end());
  return f;
}

std::vector<FrameRange> partition_frames(std::size_t frames, const PartitionScheme& scheme) {
  if (!(scheme.kappa > 0.0)) throw ArgumentError("kappa must be positive");
  std::vector<FrameRange> out;
  if (scheme.mode == PartitionMode::fix_seg_num) {
    if (!is_integral(scheme.kappa)) throw ArgumentError("FixSegNum kappa must be an integer");
    const auto m = static_cast<std::size_t>(std::llround(scheme.kappa));
    if (m == 0 || m > frames) {
      throw ArgumentError("FixSegNum(" + std::to_string(m) + ") exceeds the " + std::to_string(frames) +
                          "-frame window");
    }
    const std::size_t base = frames / m;
    const std::size_t extra = frames % m;
    std::size_t begin = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const std::size_t len = base + (j < extra ? 1 : 0);
      out.push_back({begin, begin + len});
      begin += len;
    }
  } else {
    const double len_frames = scheme.kappa * kFrameRateHz;
    if (!is_integral(len_frames)) {
      throw ArgumentError("FixSegLen kappa must be a multiple of the 0.1 s frame period");
    }
    const auto len = static_cast<std::size_t>(std::llround(len_frames));
    if (len == 0 || len > frames) {
      throw ArgumentError("FixSegLen segment of " + std::to_string(len) + " frames exceeds the " +
                          std::to_string(frames) + "-frame window");
    }
    for (std::size_t begin = 0; begin < frames; begin += len) {
      out.push_back({begin, std::min(begin + len, frames)});
    }
  }
  return out;
}

std::vector<FrameRange> partition(double window_length_s, const PartitionScheme& scheme) {
  const double frames = window_length_s * kFrameRateHz;
  if (!(frames >= 1.0) || !is_integral(frames)) {
    throw ArgumentError("window length must be a positive multiple of 0.1 s");
  }
  return partition_frames(static_cast<std::size_t>(std::llround(frames)), scheme);
}

SegmentFeatures segment_features(const Example& example, const SceneFactors& factors,
                                 const FeatureWindow& window, const FrameRange& segment,
                                 const SceneIndex& scene) {
  namespace L = feature_layout;
  if (segment.begin >= segment.end || segment.end > window.frames()) {
    throw ArgumentError("segment range lies outside the feature window");
  }
  SegmentFeatures out;
  out.observed.fill(true);

  const auto tv = kinematics(scene, example.target_id, window);
  for (std::size_t i = segment.begin; i < segment.end; ++i) {
    if (!tv.present[i]) throw DataError("target vehicle missing inside its own feature window");
  }
  const double tv_vlat = segment_mean(tv.vel_lat, segment);
  const double tv_vlong = segment_mean(tv.vel_long, segment);
  out.values[L::kVelocity + 2 * L::tv] = tv_vlat;
  out.values[L::kVelocity + 2 * L::tv + 1] = tv_vlong;
  out.values[L::kAcceleration + 2 * L::tv] = segment_mean(tv.acc_lat, segment);
  out.values[L::kAcceleration + 2 * L::tv + 1] = segment_mean(tv.acc_long, segment);

  auto impute_motion = [&](std::size_t slot) {
    out.values[L::kVelocity + 2 * slot] = tv_vlat;
    out.values[L::kVelocity + 2 * slot + 1] = tv_vlong;
    out.values[L::kAcceleration + 2 * slot] = 0.0;
    out.values[L::kAcceleration + 2 * slot + 1] = 0.0;
    for (const std::size_t base : {L::kVelocity, L::kAcceleration}) {
      out.observed[base + 2 * slot] = false;
      out.observed[base + 2 * slot + 1] = false;
    }
  };

  const std::optional<VehicleId> fronts[] = {factors.lf_id, factors.cf_id, factors.rf_id};
  for (std::size_t f = 0; f < 3; ++f) {
    const std::size_t slot = L::lf + f;
    const auto& id = fronts[f];
    bool usable = id.has_value();
    Kinematics nb;
    if (usable) {
      nb = kinematics(scene, *id, window);
      for (std::size_t i = segment.begin; usable && i < segment.end; ++i) usable = nb.present[i] != 0;
    }
    if (!usable) {
      impute_motion(slot);
      out.values[L::kGap + f] = kMissingGap;
      out.values[L::kRelVelocity + f] = 0.0;
      out.observed[L::kGap + f] = false;
      out.observed[L::kRelVelocity + f] = false;
      continue;
    }
    out.values[L::kVelocity + 2 * slot] = segment_mean(nb.vel_lat, segment);
    out.values[L::kVelocity + 2 * slot + 1] = segment_mean(nb.vel_long, segment);
    out.values[L::kAcceleration + 2 * slot] = segment_mean(nb.acc_lat, segment);
    out.values[L::kAcceleration + 2 * slot + 1] = segment_mean(nb.acc_long, segment);
    double gap = 0.0;
    double rel = 0.0;
    for (std::size_t i = segment.begin; i < segment.end; ++i) {
      gap += nb.pos_long[i] - tv.pos_long[i];
      rel += tv.vel_long[i] - nb.vel_long[i];
    }
    out.values[L::kGap + f] = gap / static_cast<double>(segment.size());
    out.values[L::kRelVelocity + f] = rel / static_cast<double>(segment.size());
  }

  // OT: average of each vehicle's own segment means over the frames it is present.
  double sums[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t contributing = 0;
  for (const auto id : factors.ot_ids) {
    const auto k = kinematics(scene, id, window);
    double local[4] = {0.0, 0.0, 0.0, 0.0};
    std::size_t count = 0;
    for (std::size_t i = segment.begin; i < segment.end; ++i) {
      if (!k.present[i]) continue;
      local[0] += k.vel_lat[i];
      local[1] += k.vel_long[i];
      local[2] += k.acc_lat[i];
      local[3] += k.acc_long[i];
      ++count;
    }
    if (count == 0) continue;
    for (int c = 0; c < 4; ++c) sums[c] += local[c] / static_cast<double>(count);
    ++contributing;
  }
  if (contributing == 0) {
    impute_motion(L::ot);
  } else {
    const auto n = static_cast<double>(contributing);
    out.values[L::kVelocity + 2 * L::ot] = sums[0] / n;
    out.values[L::kVelocity + 2 * L::ot + 1] = sums[1] / n;
    out.values[L::kAcceleration + 2 * L::ot] = sums[2] / n;
    out.values[L::kAcceleration + 2 * L::ot + 1] = sums[3] / n;
  }
  return out;
}

FeatureVector extract_feature_vector(const Example& example, Scope scope,
                                     const PartitionScheme& scheme, const SceneIndex& scene) {
  const auto window = scope_window(example, scope);
  const auto segments = partition_frames(window.frames(), scheme);
  const auto factors = assign_scene_factors(example, scene, window);
  FeatureVector v;
  v.scope = scope;
  v.values.reserve(segments.size() * kFeaturesPerSegment);
  v.observed.reserve(segments.size() * kFeaturesPerSegment);
  for (const auto& seg : segments) {
    const auto f = segment_features(example, factors, window, seg, scene);
    v.values.insert(v.values.end(), f.values.begin(), f.values.end());
    for (const bool o : f.observed) v.observed.push_back(o ? 1 : 0);
  }
  return v;
}

std::size_t feature_dimension(Scope scope, const PartitionScheme& scheme) {
  const auto frames = scope == Scope::X ? kHistoryFrames : kTrajectoryFrames;
  return partition_frames(frames, scheme).size() * kFeaturesPerSegment;
}

std::vector<std::string> feature_names(std::size_t segments) {
  static const char* kSlots[] = {"tv", "lf", "cf", "rf", "ot"};
  static const char* kFronts[] = {"lf", "cf", "rf"};
  std::vector<std::string> names;
  names.reserve(segments * kFeaturesPerSegment);
  for (std::size_t j = 0; j < segments; ++j) {
    const std::string suffix = "[" + std::to_string(j) + "]";
    for (const char* quantity : {"vel", "acc"}) {
      for (const char* slot : kSlots) {
        names.push_back(std::string(slot) + "_" + quantity + "_lat" + suffix);
        names.push_back(std::string(slot) + "_" + quantity + "_long" + suffix);
      }
    }
    for (const char* f : kFronts) names.push_back(std::string("gap_") + f + suffix);
    for (const char* f : kFronts) names.push_back(std::string("relvel_") + f + suffix);
  }
  return names;
}

FeatureSet extract_feature_set(std::span<const Example> examples, Scope scope,
                               const PartitionScheme& scheme, const SceneIndex& scene) {
  FeatureSet set;
  set.scope = scope;
  set.scheme = scheme;
  const std::size_t dim = feature_dimension(scope, scheme);
  set.segments = dim / kFeaturesPerSegment;
  set.values = Matrix(examples.size(), dim);
  set.observed.assign(examples.size() * dim, 0);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto v = extract_feature_vector(examples[i], scope, scheme, scene);
    std::copy(v.values.begin(), v.values.end(), set.values.row(i).begin());
    std::copy(v.observed.begin(), v.observed.end(), set.observed.begin() + static_cast<std::ptrdiff_t>(i * dim));
  }
  return set;
}

std::string serialize_feature_set(const FeatureSet& set) {
  nlohmann::json header{{"scope", to_string(set.scope)},
                        {"scheme", set.scheme.to_string()},
                        {"segments", set.segments},
                        {"rows", set.values.rows},
                        {"dim", set.values.cols},
                        {"dimension_order", feature_names(set.segments)},
                        {"config_hash", set.config_hash}};
  std::string blob;
  blob.reserve(set.values.values.size() * 9);
  detail::append_f64_le(blob, set.values.values);
  blob.append(reinterpret_cast<const char*>(set.observed.data()), set.observed.size());
  return detail::pack_container(kFeatureMagic, header.dump(), blob);
}

FeatureSet deserialize_feature_set(const std::string& bytes) {
  const auto c = detail::unpack_container(kFeatureMagic, bytes);
  FeatureSet set;
  try {
    const auto header = nlohmann::json::parse(c.header_json);
    set.scope = parse_scope(header.at("scope").get<std::string>());
    set.scheme = PartitionScheme::parse(header.at("scheme").get<std::string>());
    set.segments = header.at("segments").get<std::size_t>();
    set.config_hash = header.at("config_hash").get<std::string>();
    const auto rows = header.at("rows").get<std::size_t>();
    const auto dim = header.at("dim").get<std::size_t>();
    set.values = Matrix(rows, dim);
    set.values.values = detail::read_f64_le(c.blob, rows * dim);
    if (c.blob.size() != rows * dim * 9) throw DataError("feature blob size mismatch");
    const auto* mask = reinterpret_cast<const std::uint8_t*>(c.blob.data() + rows * dim * 8);
    set.observed.assign(mask, mask + rows * dim);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed feature header: ") + e.what());
  }
  return set;
}

void Standardizer::apply(std::span<double> values, std::span<const std::uint8_t> observed) const {
  if (values.size() != mean.size()) throw ArgumentError("standardizer dimension mismatch");
  for (std::size_t j = 0; j < values.size(); ++j) {
    values[j] = (observed.empty() || observed[j]) ? (values[j] - mean[j]) / std[j] : 0.0;
  }
}

Matrix Standardizer::apply(const Matrix& values, std::span<const std::uint8_t> observed) const {
  Matrix out = values;
  for (std::size_t i = 0; i < out.rows; ++i) {
    apply(out.row(i), observed.empty() ? observed : observed.subspan(i * out.cols, out.cols));
  }
  return out;
}

Standardizer fit_standardizer(const Matrix& values, std::span<const std::uint8_t> observed) {
  if (values.rows < 2) throw ArgumentError("standardizer needs at least 2 training vectors");
  const std::size_t d = values.cols;
  auto seen = [&](std::size_t i, std::size_t j) { return observed.empty() || observed[i * d + j] != 0; };
  const auto names = d % kFeaturesPerSegment == 0 ? feature_names(d / kFeaturesPerSegment)
                                                  : std::vector<std::string>{};
  Standardizer s;
  s.mean.assign(d, 0.0);
  s.std.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < values.rows; ++i) {
      if (!seen(i, j)) continue;
      sum += values(i, j);
      ++count;
    }
    if (count == 0) {
      throw ArgumentError("dimension " + std::to_string(j) + (names.empty() ? "" : " (" + names[j] + ")") +
                          " has no observed entries");
    }
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (std::size_t i = 0; i < values.rows; ++i) {
      if (!seen(i, j)) continue;
      const double dv = values(i, j) - mean;
      ss += dv * dv;
    }
    s.mean[j] = mean;
    s.std[j] = std::max(std::sqrt(ss / static_cast<double>(count)), kStdFloor);
  }
  return s;
}

}  // namespace trajmine

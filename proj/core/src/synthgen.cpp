#include "trajmine/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <json.hpp>

#include "trajmine/errors.hpp"

namespace trajmine {

namespace {

constexpr double kLaneChangeTau = 0.68;  // sigmoid time constant; 10%-90% in ~3 s
constexpr VehicleId kIdStride = 16;
constexpr FrameIndex kScenarioGapFrames = 20;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double lane_center(int lane) { return (lane - 0.5) * kLaneWidth; }

int lane_of(double lateral, int lane_count) {
  const int lane = static_cast<int>(std::floor(lateral / kLaneWidth)) + 1;
  return std::clamp(lane, 1, lane_count);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Longitudinal positions under per-interval constant acceleration.
std::vector<double> integrate(double x0, double v0, const std::vector<double>& accel) {
  std::vector<double> x(accel.size() + 1);
  x[0] = x0;
  double v = v0;
  for (std::size_t k = 0; k < accel.size(); ++k) {
    x[k + 1] = x[k] + v * kFramePeriod + 0.5 * accel[k] * kFramePeriod * kFramePeriod;
    v += accel[k] * kFramePeriod;
  }
  return x;
}

struct VehiclePlan {
  double x0 = 0.0;
  double v0 = 0.0;
  std::vector<double> accel;      // size frames - 1
  std::vector<double> lateral;    // size frames
};

VehicleTrack realize(const VehiclePlan& plan, VehicleId id, FrameIndex frame_offset, int lane_count,
                     double noise_std, std::mt19937_64& rng) {
  const auto longitudinal = integrate(plan.x0, plan.v0, plan.accel);
  std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);
  VehicleTrack track{id, {}};
  track.points.reserve(longitudinal.size());
  for (std::size_t k = 0; k < longitudinal.size(); ++k) {
    double lat = plan.lateral[k];
    double lon = longitudinal[k];
    const int lane = lane_of(lat, lane_count);
    if (noise_std > 0.0) {
      lat += noise(rng);
      lon += noise(rng);
    }
    const FrameIndex frame = frame_offset + static_cast<FrameIndex>(k);
    track.points.push_back(TrajectoryPoint{frame, frame_time(frame), lat, lon, lane});
  }
  return track;
}

}  // namespace

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::car_follow: return "car_follow";
    case ScenarioKind::lane_change: return "lane_change";
    case ScenarioKind::cancelled_lane_change: return "cancelled_lane_change";
    case ScenarioKind::sudden_brake: return "sudden_brake";
    case ScenarioKind::exit_accelerate: return "exit_accelerate";
  }
  return "unknown";
}

ScenarioKind parse_scenario_kind(const std::string& text) {
  for (const auto k : {ScenarioKind::car_follow, ScenarioKind::lane_change,
                       ScenarioKind::cancelled_lane_change, ScenarioKind::sudden_brake,
                       ScenarioKind::exit_accelerate}) {
    if (to_string(k) == text) return k;
  }
  throw ArgumentError("unknown scenario kind '" + text + "'");
}

bool is_rare(ScenarioKind kind) {
  return kind == ScenarioKind::cancelled_lane_change || kind == ScenarioKind::sudden_brake ||
         kind == ScenarioKind::exit_accelerate;
}

Scenario gen_scenario(const ScenarioSpec& spec) {
  if (spec.duration < 8.0) throw ArgumentError("scenario duration must be >= 8 s");
  if (spec.lane_count < 2) throw ArgumentError("lane_count must be >= 2");
  if (spec.noise_std < 0.0) throw ArgumentError("noise_std must be >= 0");

  std::mt19937_64 rng(spec.seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };

  const auto frames = static_cast<std::size_t>(std::llround(spec.duration * kFrameRateHz));
  const double speed = spec.initial_speed;

  Scenario out;
  out.rare = is_rare(spec.kind);
  auto& m = out.maneuver;
  m.start_lane = uniform_int(1, spec.lane_count);

  auto pick_direction = [&](bool prefer_right) {
    if (m.start_lane == 1) return 1;
    if (m.start_lane == spec.lane_count) return -1;
    if (prefer_right) return 1;
    return uniform_int(0, 1) == 0 ? -1 : 1;
  };

  VehiclePlan target;
  target.x0 = 0.0;
  target.v0 = speed;
  target.accel.assign(frames - 1, 0.0);
  target.lateral.assign(frames, lane_center(m.start_lane));
  const double base_lat = lane_center(m.start_lane);

  switch (spec.kind) {
    case ScenarioKind::car_follow:
      break;
    case ScenarioKind::lane_change: {
      m.direction = pick_direction(false);
      m.lateral_center_time = uniform(1.5, 6.5);
      for (std::size_t k = 0; k < frames; ++k) {
        const double t = static_cast<double>(k) * kFramePeriod;
        target.lateral[k] =
            base_lat + m.direction * kLaneWidth * sigmoid((t - m.lateral_center_time) / kLaneChangeTau);
      }
      break;
    }
    case ScenarioKind::cancelled_lane_change: {
      m.direction = pick_direction(false);
      const double width = uniform(3.0, 4.0);
      const double start = uniform(2.0, std::min(4.5, 8.0 - width));
      m.magnitude = uniform(0.8, 1.5);
      m.lateral_center_time = start + 0.5 * width;
      for (std::size_t k = 0; k < frames; ++k) {
        const double t = static_cast<double>(k) * kFramePeriod;
        if (t >= start && t <= start + width) {
          const double s = std::sin(std::numbers::pi * (t - start) / width);
          target.lateral[k] = base_lat + m.direction * m.magnitude * s * s;
        }
      }
      break;
    }
    case ScenarioKind::sudden_brake: {
      m.magnitude = spec.brake_decel > 0.0 ? spec.brake_decel : uniform(4.0, 6.0);
      m.event_frame = uniform_int(35, 60);
      for (FrameIndex k = m.event_frame; k < m.event_frame + 15; ++k) {
        target.accel[static_cast<std::size_t>(k)] = -m.magnitude;
      }
      break;
    }
    case ScenarioKind::exit_accelerate: {
      m.direction = pick_direction(true);
      m.magnitude = 2.0;
      m.event_frame = uniform_int(25, 45);
      m.lateral_center_time = uniform(3.0, 5.5);
      for (std::size_t k = static_cast<std::size_t>(m.event_frame); k + 1 < frames; ++k) {
        target.accel[k] = m.magnitude;
      }
      for (std::size_t k = 0; k < frames; ++k) {
        const double t = static_cast<double>(k) * kFramePeriod;
        target.lateral[k] =
            base_lat + m.direction * kLaneWidth * sigmoid((t - m.lateral_center_time) / kLaneChangeTau);
      }
      break;
    }
  }

  std::vector<VehiclePlan> plans{target};
  struct Slot {
    int lane;
    double x0;
  };
  std::vector<Slot> occupied{{m.start_lane, 0.0}};

  // Leader in the target's lane.
  VehiclePlan leader;
  leader.x0 = uniform(15.0, 50.0);
  leader.v0 = spec.kind == ScenarioKind::car_follow ? speed : speed + uniform(-1.0, 1.0);
  leader.accel.assign(frames - 1, 0.0);
  leader.lateral.assign(frames, lane_center(m.start_lane));
  if (spec.kind == ScenarioKind::sudden_brake) {
    leader.v0 = speed;
    for (FrameIndex k = m.event_frame - 5; k < m.event_frame + 10; ++k) {
      leader.accel[static_cast<std::size_t>(k)] = -m.magnitude;
    }
  }
  plans.push_back(leader);
  occupied.push_back({m.start_lane, leader.x0});

  const int neighbors = uniform_int(3, 8);
  for (int n = 1; n < neighbors; ++n) {
    Slot slot{};
    bool placed = false;
    for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
      slot = {uniform_int(1, spec.lane_count), uniform(-60.0, 80.0)};
      placed = std::none_of(occupied.begin(), occupied.end(), [&](const Slot& o) {
        return o.lane == slot.lane && std::abs(o.x0 - slot.x0) < 8.0;
      });
    }
    if (!placed) continue;
    occupied.push_back(slot);
    VehiclePlan p;
    p.x0 = slot.x0;
    p.v0 = speed + uniform(-2.0, 2.0);
    p.accel.assign(frames - 1, 0.0);
    p.lateral.assign(frames, lane_center(slot.lane) + uniform(-0.3, 0.3));
    plans.push_back(std::move(p));
  }

  for (std::size_t i = 0; i < plans.size(); ++i) {
    out.tracks.push_back(realize(plans[i], spec.id_base + static_cast<VehicleId>(i), spec.frame_offset,
                                 spec.lane_count, spec.noise_std, rng));
  }
  return out;
}

std::vector<VehicleId> LabeledDataset::target_ids() const {
  std::vector<VehicleId> ids;
  ids.reserve(targets.size());
  for (const auto& t : targets) ids.push_back(t.vehicle_id);
  return ids;
}

std::map<VehicleId, bool> LabeledDataset::rare_flags() const {
  std::map<VehicleId, bool> flags;
  for (const auto& t : targets) flags[t.vehicle_id] = t.rare;
  return flags;
}

LabeledDataset gen_dataset(std::size_t n_examples, double rare_rate, std::uint64_t seed,
                           const DatasetOptions& options) {
  if (!(rare_rate >= 0.0 && rare_rate <= 1.0)) throw ArgumentError("rare_rate must lie in [0, 1]");
  std::mt19937_64 rng(splitmix64(seed));
  const auto n_rare = static_cast<std::size_t>(std::llround(rare_rate * static_cast<double>(n_examples)));

  std::vector<std::size_t> order(n_examples);
  for (std::size_t i = 0; i < n_examples; ++i) order[i] = i;
  for (std::size_t i = n_examples; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  std::vector<bool> rare(n_examples, false);
  for (std::size_t i = 0; i < n_rare; ++i) rare[order[i]] = true;

  static constexpr ScenarioKind kRareKinds[] = {ScenarioKind::cancelled_lane_change,
                                                ScenarioKind::sudden_brake, ScenarioKind::exit_accelerate};
  static constexpr ScenarioKind kCommonKinds[] = {ScenarioKind::car_follow, ScenarioKind::lane_change};

  const auto frames = static_cast<FrameIndex>(std::llround(options.duration * kFrameRateHz));
  LabeledDataset data;
  data.targets.reserve(n_examples);
  for (std::size_t i = 0; i < n_examples; ++i) {
    ScenarioSpec spec;
    spec.kind = rare[i] ? kRareKinds[std::uniform_int_distribution<int>(0, 2)(rng)]
                        : kCommonKinds[std::uniform_int_distribution<int>(0, 1)(rng)];
    spec.duration = options.duration;
    spec.lane_count = options.lane_count;
    spec.noise_std = options.noise_std;
    spec.initial_speed = std::uniform_real_distribution<double>(options.min_speed, options.max_speed)(rng);
    spec.seed = splitmix64(seed ^ (0xa5a5a5a5ULL + i));
    spec.id_base = 1 + static_cast<VehicleId>(i) * kIdStride;
    spec.frame_offset = 1 + static_cast<FrameIndex>(i) * (frames + kScenarioGapFrames);

    auto scenario = gen_scenario(spec);
    data.targets.push_back(TargetLabel{spec.id_base, spec.kind, scenario.rare});
    for (auto& t : scenario.tracks) data.tracks.push_back(std::move(t));
  }
  return data;
}

std::string rare_flags_json(const LabeledDataset& dataset, const std::string& config_hash) {
  nlohmann::json flags = nlohmann::json::object();
  nlohmann::json kinds = nlohmann::json::object();
  for (const auto& t : dataset.targets) {
    flags[std::to_string(t.vehicle_id)] = t.rare;
    kinds[std::to_string(t.vehicle_id)] = to_string(t.kind);
  }
  nlohmann::json doc{{"config_hash", config_hash}, {"rare_flags", flags}, {"kinds", kinds}};
  return doc.dump(1) + "\n";
}

RareFlagFile parse_rare_flags_json(const std::string& text) {
  RareFlagFile file;
  try {
    const auto doc = nlohmann::json::parse(text);
    file.config_hash = doc.value("config_hash", "");
    for (const auto& [key, value] : doc.at("rare_flags").items()) {
      file.rare_flags[std::stoll(key)] = value.get<bool>();
    }
    if (doc.contains("kinds")) {
      for (const auto& [key, value] : doc.at("kinds").items()) {
        file.kinds[std::stoll(key)] = parse_scenario_kind(value.get<std::string>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed rare-flag sidecar: ") + e.what());
  }
  return file;
}

}  // namespace trajmine

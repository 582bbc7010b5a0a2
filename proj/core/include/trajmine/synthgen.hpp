#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "trajmine/data_model.hpp"

namespace trajmine {

enum class ScenarioKind { car_follow, lane_change, cancelled_lane_change, sudden_brake, exit_accelerate };

std::string to_string(ScenarioKind kind);
ScenarioKind parse_scenario_kind(const std::string& text);
bool is_rare(ScenarioKind kind);

inline constexpr double kLaneWidth = 3.6;

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::car_follow;
  double duration = 8.0;  // seconds, >= 8
  int lane_count = 3;     // >= 2
  double initial_speed = 20.0;
  double noise_std = 0.05;  // meters
  std::uint64_t seed = 0;
  // Placement inside a larger dataset: vehicle ids start at id_base, frames at frame_offset.
  VehicleId id_base = 1;
  FrameIndex frame_offset = 0;
  // Brake deceleration in m/s^2; 0 draws from [4, 6].
  double brake_decel = 0.0;
};

// Parameters the generator drew for the target's maneuver, for tests and sidecars.
struct ManeuverInfo {
  int start_lane = 0;
  int direction = 0;             // -1 left, +1 right, 0 none
  FrameIndex event_frame = -1;   // brake / acceleration onset, relative to scenario start
  double magnitude = 0.0;        // brake decel or acceleration, m/s^2
  double lateral_center_time = 0.0;
};

struct Scenario {
  std::vector<VehicleTrack> tracks;  // tracks[0] is the target
  bool rare = false;
  ManeuverInfo maneuver;
};

Scenario gen_scenario(const ScenarioSpec& spec);

struct TargetLabel {
  VehicleId vehicle_id = 0;
  ScenarioKind kind = ScenarioKind::car_follow;
  bool rare = false;
};

struct LabeledDataset {
  std::vector<VehicleTrack> tracks;
  std::vector<TargetLabel> targets;  // one per generated scenario, in generation order

  std::vector<VehicleId> target_ids() const;
  std::map<VehicleId, bool> rare_flags() const;
};

struct DatasetOptions {
  double duration = 8.0;
  int lane_count = 3;
  double noise_std = 0.05;
  double min_speed = 12.0;
  double max_speed = 30.0;
};

// Independent scenarios laid out back to back in time so they never share frames.
LabeledDataset gen_dataset(std::size_t n_examples, double rare_rate, std::uint64_t seed,
                           const DatasetOptions& options = {});

// Sidecar: {"rare_flags": {"<vehicle_id>": bool, ...}, "kinds": {"<vehicle_id>": "<kind>"}}.
std::string rare_flags_json(const LabeledDataset& dataset, const std::string& config_hash);
struct RareFlagFile {
  std::string config_hash;
  std::map<VehicleId, bool> rare_flags;
  std::map<VehicleId, ScenarioKind> kinds;
};
RareFlagFile parse_rare_flags_json(const std::string& text);

}  // namespace trajmine

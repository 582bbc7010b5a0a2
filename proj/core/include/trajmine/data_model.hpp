#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace trajmine {

using VehicleId = std::int64_t;
using FrameIndex = std::int64_t;

inline constexpr double kFrameRateHz = 10.0;
inline constexpr double kFramePeriod = 0.1;
inline constexpr double kFeetToMeters = 0.3048;
inline constexpr std::size_t kHistoryFrames = 30;
inline constexpr std::size_t kFutureFrames = 50;
inline constexpr std::size_t kTrajectoryFrames = kHistoryFrames + kFutureFrames;

inline double frame_time(FrameIndex frame) { return static_cast<double>(frame) * kFramePeriod; }

struct TrajectoryPoint {
  FrameIndex frame = 0;
  double time = 0.0;              // seconds, frame * 0.1
  double lateral_pos = 0.0;       // meters, across-road (Local_X)
  double longitudinal_pos = 0.0;  // meters, along-road (Local_Y)
  int lane_id = 0;

  bool operator==(const TrajectoryPoint&) const = default;
};

struct VehicleTrack {
  VehicleId vehicle_id = 0;
  std::vector<TrajectoryPoint> points;  // contiguous frames, strictly increasing

  FrameIndex first_frame() const { return points.front().frame; }
  FrameIndex last_frame() const { return points.back().frame; }
  bool covers(FrameIndex begin, FrameIndex end_inclusive) const {
    return !points.empty() && first_frame() <= begin && last_frame() >= end_inclusive;
  }
  // Point at an absolute frame; nullptr when the track is absent at that frame.
  const TrajectoryPoint* at(FrameIndex frame) const;
};

// One prediction instance: 30 history frames ending at T inclusive and the
// 50 frames after T.
struct Example {
  VehicleId target_id = 0;
  FrameIndex t_frame = 0;
  double T = 0.0;
  std::vector<TrajectoryPoint> history_frames;
  std::vector<TrajectoryPoint> future_frames;
  std::vector<VehicleId> scene_ids;  // ascending, excludes target_id

  FrameIndex window_begin() const { return t_frame - static_cast<FrameIndex>(kHistoryFrames) + 1; }
  FrameIndex window_end() const { return t_frame + static_cast<FrameIndex>(kFutureFrames); }

  bool operator==(const Example&) const = default;
};

struct DatasetSplit {
  std::vector<std::size_t> train_indices;
  std::vector<std::size_t> eval_indices;
};

enum class LengthUnit { meters, feet };

LengthUnit parse_length_unit(const std::string& text);

struct IngestResult {
  std::vector<VehicleTrack> tracks;
  std::vector<std::size_t> rejected_rows;  // 1-based data row numbers (header excluded)
};

// Parses an NGSIM-shaped table. Required columns (any order, extras ignored):
// Vehicle_ID, Frame_ID, Local_X, Local_Y, Lane_ID. Tracks with frame gaps are
// split into maximal contiguous sub-tracks.
IngestResult ingest_csv(const std::filesystem::path& path, LengthUnit unit);
IngestResult ingest_csv(std::istream& in, LengthUnit unit);

// Writes tracks in the schema ingest_csv reads, positions in meters.
void write_tracks_csv(std::ostream& out, std::span<const VehicleTrack> tracks);

// Lookup structure answering "which tracks are present at frame f".
class SceneIndex {
 public:
  explicit SceneIndex(std::span<const VehicleTrack> tracks);

  std::span<const VehicleTrack> tracks() const { return tracks_; }
  // Indices into tracks() of every track present at the frame.
  std::span<const std::uint32_t> present_at(FrameIndex frame) const;
  // Point of a vehicle at a frame, searching every sub-track of that vehicle.
  const TrajectoryPoint* point(VehicleId id, FrameIndex frame) const;
  // True when the vehicle has a point at every frame of [begin, end].
  bool present_throughout(VehicleId id, FrameIndex begin, FrameIndex end) const;

 private:
  std::span<const VehicleTrack> tracks_;
  FrameIndex min_frame_ = 0;
  std::vector<std::vector<std::uint32_t>> by_frame_;
  std::unordered_map<VehicleId, std::vector<std::uint32_t>> by_vehicle_;
};

// Emits one example per admissible T on every track, consecutive T values on
// one track `stride` frames apart. When `targets` is non-empty only tracks of
// those vehicles become targets (scene ids still cover all vehicles).
std::vector<Example> window_examples(std::span<const VehicleTrack> tracks, std::size_t stride,
                                     std::span<const VehicleId> targets = {});

DatasetSplit split_dataset(std::size_t n_examples, double eval_fraction, std::uint64_t seed);

// Line-delimited example records. The first line is a header object carrying
// `config_hash`; each following line is one example.
void write_examples(std::ostream& out, std::span<const Example> examples,
                    const std::string& config_hash);
struct ExampleFile {
  std::string config_hash;
  std::vector<Example> examples;
};
ExampleFile read_examples(std::istream& in);

}  // namespace trajmine

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trajmine/data_model.hpp"
#include "trajmine/matrix.hpp"

namespace trajmine {

inline constexpr std::size_t kFeaturesPerSegment = 26;
inline constexpr double kOtherVehicleRadius = 60.0;  // meters, longitudinal
inline constexpr double kMissingGap = 200.0;         // meters, raw sentinel for an absent factor
inline constexpr double kStdFloor = 1e-6;

// Offsets of each block inside a 26-value segment.
namespace feature_layout {
inline constexpr std::size_t kVelocity = 0;       // f1-f10: (lat, long) for TV, LF, CF, RF, OT
inline constexpr std::size_t kAcceleration = 10;  // f11-f20: same layout
inline constexpr std::size_t kGap = 20;           // f21-f23: LF, CF, RF
inline constexpr std::size_t kRelVelocity = 23;   // f24-f26: LF, CF, RF
// Slot order within the velocity and acceleration blocks.
enum Slot : std::size_t { tv = 0, lf = 1, cf = 2, rf = 3, ot = 4 };
}  // namespace feature_layout

enum class Scope { X, Z };
std::string to_string(Scope scope);
Scope parse_scope(const std::string& text);

struct SceneFactors {
  std::optional<VehicleId> lf_id;
  std::optional<VehicleId> cf_id;
  std::optional<VehicleId> rf_id;
  std::vector<VehicleId> ot_ids;  // ascending
};

enum class PartitionMode { fix_seg_num, fix_seg_len };

struct PartitionScheme {
  PartitionMode mode = PartitionMode::fix_seg_num;
  double kappa = 5.0;  // segment count (FixSegNum) or seconds (FixSegLen)

  // "fixsegnum:5" / "fixseglen:1.4"
  static PartitionScheme parse(const std::string& text);
  std::string to_string() const;
  bool operator==(const PartitionScheme&) const = default;
};

// Half-open frame range relative to the window start.
struct FrameRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const FrameRange&) const = default;
};

// Absolute inclusive frame window of a scope: X = [T-29, T], Z = [T-29, T+50].
struct FeatureWindow {
  FrameIndex begin = 0;
  FrameIndex end = 0;
  std::size_t frames() const { return static_cast<std::size_t>(end - begin + 1); }
};
FeatureWindow scope_window(const Example& example, Scope scope);
double scope_length_seconds(Scope scope);

// LF/CF/RF are the nearest vehicles strictly ahead at T in lanes -1/0/+1 and
// must be present over the whole window; OT are the remaining vehicles within
// +-60 m longitudinally at T.
SceneFactors assign_scene_factors(const Example& example, const SceneIndex& scene,
                                  const FeatureWindow& window);

std::vector<FrameRange> partition(double window_length_s, const PartitionScheme& scheme);
std::vector<FrameRange> partition_frames(std::size_t frames, const PartitionScheme& scheme);

struct SegmentFeatures {
  std::array<double, kFeaturesPerSegment> values{};
  std::array<bool, kFeaturesPerSegment> observed{};
};

SegmentFeatures segment_features(const Example& example, const SceneFactors& factors,
                                 const FeatureWindow& window, const FrameRange& segment,
                                 const SceneIndex& scene);

struct FeatureVector {
  Scope scope = Scope::X;
  std::vector<double> values;          // 26 * M, segment blocks in time order
  std::vector<std::uint8_t> observed;  // 0 where a missing factor was imputed
};

FeatureVector extract_feature_vector(const Example& example, Scope scope,
                                     const PartitionScheme& scheme, const SceneIndex& scene);

std::size_t feature_dimension(Scope scope, const PartitionScheme& scheme);
std::vector<std::string> feature_names(std::size_t segments);

// Features of many examples plus the metadata stored alongside them on disk.
struct FeatureSet {
  Scope scope = Scope::X;
  PartitionScheme scheme;
  std::size_t segments = 0;
  Matrix values;
  std::vector<std::uint8_t> observed;  // rows * cols
  std::string config_hash;
};

FeatureSet extract_feature_set(std::span<const Example> examples, Scope scope,
                               const PartitionScheme& scheme, const SceneIndex& scene);

std::string serialize_feature_set(const FeatureSet& set);
FeatureSet deserialize_feature_set(const std::string& bytes);

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t dim() const { return mean.size(); }
  bool empty() const { return mean.empty(); }
  // Standardizes in place; imputed dimensions become exactly 0.
  void apply(std::span<double> values, std::span<const std::uint8_t> observed) const;
  Matrix apply(const Matrix& values, std::span<const std::uint8_t> observed) const;
};

// Mean and population std over observed entries only; std floored at 1e-6.
Standardizer fit_standardizer(const Matrix& values, std::span<const std::uint8_t> observed);

}  // namespace trajmine

#include "trajmine/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string_view>
#include <unordered_set>

#include <json.hpp>

#include "trajmine/errors.hpp"
#include "text_io.hpp"

namespace trajmine {

namespace {

constexpr std::string_view kRequiredColumns[] = {"Vehicle_ID", "Frame_ID", "Local_X", "Local_Y",
                                                 "Lane_ID"};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return fields;
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  const auto res = std::from_chars(s.data(), end, out);
  return res.ec == std::errc{} && res.ptr == end;
}

struct RawRow {
  VehicleId id;
  FrameIndex frame;
  double lateral;
  double longitudinal;
  int lane;
};

std::vector<VehicleTrack> split_contiguous(VehicleId id, const std::vector<RawRow>& rows) {
  std::vector<VehicleTrack> out;
  for (const auto& r : rows) {
    if (out.empty() || r.frame != out.back().points.back().frame + 1) {
      out.push_back(VehicleTrack{id, {}});
    }
    out.back().points.push_back(
        TrajectoryPoint{r.frame, frame_time(r.frame), r.lateral, r.longitudinal, r.lane});
  }
  return out;
}

nlohmann::json points_to_json(const std::vector<TrajectoryPoint>& points) {
  auto arr = nlohmann::json::array();
  for (const auto& p : points) {
    arr.push_back({p.frame, p.lateral_pos, p.longitudinal_pos, p.lane_id});
  }
  return arr;
}

std::vector<TrajectoryPoint> points_from_json(const nlohmann::json& arr) {
  std::vector<TrajectoryPoint> points;
  points.reserve(arr.size());
  for (const auto& p : arr) {
    const auto frame = p.at(0).get<FrameIndex>();
    points.push_back(TrajectoryPoint{frame, frame_time(frame), p.at(1).get<double>(),
                                     p.at(2).get<double>(), p.at(3).get<int>()});
  }
  return points;
}

}  // namespace

const TrajectoryPoint* VehicleTrack::at(FrameIndex frame) const {
  if (points.empty() || frame < first_frame() || frame > last_frame()) return nullptr;
  return &points[static_cast<std::size_t>(frame - first_frame())];
}

LengthUnit parse_length_unit(const std::string& text) {
  if (text == "meters" || text == "m") return LengthUnit::meters;
  if (text == "feet" || text == "ft") return LengthUnit::feet;
  throw ArgumentError("unknown length unit '" + text + "' (expected meters or feet)");
}

IngestResult ingest_csv(const std::filesystem::path& path, LengthUnit unit) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return ingest_csv(in, unit);
}

IngestResult ingest_csv(std::istream& in, LengthUnit unit) {
  std::string line;
  bool have_header = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] == '#') continue;
    have_header = true;
    break;
  }
  if (!have_header) throw SchemaError("empty input: header row required");

  const auto header = split_fields(line);
  std::size_t col[std::size(kRequiredColumns)];
  for (std::size_t c = 0; c < std::size(kRequiredColumns); ++c) {
    const auto it = std::find(header.begin(), header.end(), kRequiredColumns[c]);
    if (it == header.end()) {
      throw SchemaError("missing required column '" + std::string(kRequiredColumns[c]) + "'");
    }
    col[c] = static_cast<std::size_t>(it - header.begin());
  }
  const std::size_t needed = *std::max_element(std::begin(col), std::end(col)) + 1;
  const double scale = unit == LengthUnit::feet ? kFeetToMeters : 1.0;

  IngestResult result;
  std::map<VehicleId, std::vector<RawRow>> by_vehicle;
  std::size_t row_number = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row_number;
    const auto fields = split_fields(line);
    double v[std::size(kRequiredColumns)];
    bool ok = fields.size() >= needed;
    for (std::size_t c = 0; ok && c < std::size(kRequiredColumns); ++c) {
      ok = parse_double(fields[col[c]], v[c]) && std::isfinite(v[c]);
    }
    if (!ok) {
      result.rejected_rows.push_back(row_number);
      continue;
    }
    RawRow row{static_cast<VehicleId>(std::llround(v[0])), static_cast<FrameIndex>(std::llround(v[1])),
               v[2] * scale, v[3] * scale, static_cast<int>(std::lround(v[4]))};
    auto& rows = by_vehicle[row.id];
    if (!rows.empty() && row.frame <= rows.back().frame) {
      throw DataError("vehicle " + std::to_string(row.id) + ": Frame_ID " +
                      std::to_string(row.frame) + " at row " + std::to_string(row_number) +
                      " does not increase (previous " + std::to_string(rows.back().frame) + ")");
    }
    rows.push_back(row);
  }

  for (const auto& [id, rows] : by_vehicle) {
    for (auto& track : split_contiguous(id, rows)) result.tracks.push_back(std::move(track));
  }
  return result;
}

void write_tracks_csv(std::ostream& out, std::span<const VehicleTrack> tracks) {
  out << "Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n";
  for (const auto& track : tracks) {
    for (const auto& p : track.points) {
      out << track.vehicle_id << ',' << p.frame << ',' << detail::format_double(p.lateral_pos) << ','
          << detail::format_double(p.longitudinal_pos) << ',' << p.lane_id << '\n';
    }
  }
}

SceneIndex::SceneIndex(std::span<const VehicleTrack> tracks) : tracks_(tracks) {
  if (tracks.empty()) return;
  FrameIndex lo = tracks.front().first_frame();
  FrameIndex hi = tracks.front().last_frame();
  for (const auto& t : tracks) {
    lo = std::min(lo, t.first_frame());
    hi = std::max(hi, t.last_frame());
  }
  min_frame_ = lo;
  by_frame_.resize(static_cast<std::size_t>(hi - lo + 1));
  for (std::uint32_t i = 0; i < tracks.size(); ++i) {
    for (FrameIndex f = tracks[i].first_frame(); f <= tracks[i].last_frame(); ++f) {
      by_frame_[static_cast<std::size_t>(f - lo)].push_back(i);
    }
    by_vehicle_[tracks[i].vehicle_id].push_back(i);
  }
}

std::span<const std::uint32_t> SceneIndex::present_at(FrameIndex frame) const {
  if (by_frame_.empty() || frame < min_frame_) return {};
  const auto k = static_cast<std::size_t>(frame - min_frame_);
  if (k >= by_frame_.size()) return {};
  return by_frame_[k];
}

const TrajectoryPoint* SceneIndex::point(VehicleId id, FrameIndex frame) const {
  const auto it = by_vehicle_.find(id);
  if (it == by_vehicle_.end()) return nullptr;
  for (const auto ti : it->second) {
    if (const auto* p = tracks_[ti].at(frame)) return p;
  }
  return nullptr;
}

bool SceneIndex::present_throughout(VehicleId id, FrameIndex begin, FrameIndex end) const {
  const auto it = by_vehicle_.find(id);
  if (it == by_vehicle_.end()) return false;
  // Sub-tracks of one vehicle are separated by gaps, so one must cover the range.
  return std::any_of(it->second.begin(), it->second.end(),
                     [&](std::uint32_t ti) { return tracks_[ti].covers(begin, end); });
}

std::vector<Example> window_examples(std::span<const VehicleTrack> tracks, std::size_t stride,
                                     std::span<const VehicleId> targets) {
  if (stride == 0) throw ArgumentError("stride must be >= 1");
  const SceneIndex index(tracks);
  const std::unordered_set<VehicleId> wanted(targets.begin(), targets.end());
  std::vector<Example> out;
  for (const auto& track : tracks) {
    if (!wanted.empty() && !wanted.contains(track.vehicle_id)) continue;
    const std::size_t n = track.points.size();
    if (n < kTrajectoryFrames) continue;
    for (std::size_t t = kHistoryFrames - 1; t + kFutureFrames < n; t += stride) {
      Example ex;
      ex.target_id = track.vehicle_id;
      ex.t_frame = track.points[t].frame;
      ex.T = frame_time(ex.t_frame);
      ex.history_frames.assign(track.points.begin() + static_cast<std::ptrdiff_t>(t + 1 - kHistoryFrames),
                               track.points.begin() + static_cast<std::ptrdiff_t>(t + 1));
      ex.future_frames.assign(track.points.begin() + static_cast<std::ptrdiff_t>(t + 1),
                              track.points.begin() + static_cast<std::ptrdiff_t>(t + 1 + kFutureFrames));
      for (FrameIndex f = ex.window_begin(); f <= ex.window_end(); ++f) {
        for (const auto ti : index.present_at(f)) {
          const auto id = tracks[ti].vehicle_id;
          if (id != ex.target_id) ex.scene_ids.push_back(id);
        }
      }
      std::sort(ex.scene_ids.begin(), ex.scene_ids.end());
      ex.scene_ids.erase(std::unique(ex.scene_ids.begin(), ex.scene_ids.end()), ex.scene_ids.end());
      out.push_back(std::move(ex));
    }
  }
  return out;
}

DatasetSplit split_dataset(std::size_t n_examples, double eval_fraction, std::uint64_t seed) {
  if (n_examples < 2) throw ArgumentError("split_dataset needs at least 2 examples");
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) {
    throw ArgumentError("eval_fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> perm(n_examples);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n_examples - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    std::swap(perm[i], perm[pick(rng)]);
  }
  const auto k = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(n_examples)));
  DatasetSplit split;
  split.eval_indices.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  split.train_indices.assign(perm.begin() + static_cast<std::ptrdiff_t>(k), perm.end());
  std::sort(split.eval_indices.begin(), split.eval_indices.end());
  std::sort(split.train_indices.begin(), split.train_indices.end());
  return split;
}

void write_examples(std::ostream& out, std::span<const Example> examples,
                    const std::string& config_hash) {
  nlohmann::json header{{"format", "trajmine-examples-1"},
                        {"config_hash", config_hash},
                        {"count", examples.size()}};
  out << header.dump() << '\n';
  for (const auto& ex : examples) {
    nlohmann::json rec{{"target_id", ex.target_id},
                       {"t_frame", ex.t_frame},
                       {"T", ex.T},
                       {"history", points_to_json(ex.history_frames)},
                       {"future", points_to_json(ex.future_frames)},
                       {"scene_ids", ex.scene_ids}};
    out << rec.dump() << '\n';
  }
}

ExampleFile read_examples(std::istream& in) {
  ExampleFile file;
  std::string line;
  if (!std::getline(in, line)) throw DataError("example file is empty");
  try {
    const auto header = nlohmann::json::parse(line);
    if (header.value("format", "") != "trajmine-examples-1") {
      throw DataError("not a trajmine example file");
    }
    file.config_hash = header.at("config_hash").get<std::string>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto rec = nlohmann::json::parse(line);
      Example ex;
      ex.target_id = rec.at("target_id").get<VehicleId>();
      ex.t_frame = rec.at("t_frame").get<FrameIndex>();
      ex.T = rec.at("T").get<double>();
      ex.history_frames = points_from_json(rec.at("history"));
      ex.future_frames = points_from_json(rec.at("future"));
      ex.scene_ids = rec.at("scene_ids").get<std::vector<VehicleId>>();
      file.examples.push_back(std::move(ex));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed example file: ") + e.what());
  }
  return file;
}

}  // namespace trajmine

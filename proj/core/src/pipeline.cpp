#include "trajmine/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "text_io.hpp"
#include "trajmine/data_model.hpp"
#include "trajmine/errors.hpp"
#include "trajmine/mining.hpp"
#include "trajmine/synthgen.hpp"

namespace trajmine {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kStageNames[] = {"gen", "ingest", "features", "train", "score", "mine", "eval", "ablate"};

class ConfigReader {
 public:
  ConfigReader(const std::string& text, std::string source) : text_(text), source_(std::move(source)) {}

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    const std::size_t line = line_of(key);
    throw ConfigError(source_ + (line ? ":" + std::to_string(line) : std::string()) + ": " + message);
  }

  void check_keys(const json& obj, const std::string& section, std::initializer_list<const char*> allowed) const {
    if (!obj.is_object()) fail(section, "'" + section + "' must be an object");
    for (const auto& [key, value] : obj.items()) {
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
        fail(key, "unknown key '" + (section.empty() ? key : section + "." + key) + "'");
      }
    }
  }

  void number(const json& obj, const char* key, double& dst) const {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number()) fail(key, std::string("'") + key + "' must be a number");
    dst = v.get<double>();
  }

  template <typename U>
  void unsigned_int(const json& obj, const char* key, U& dst) const {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number_unsigned()) fail(key, std::string("'") + key + "' must be a non-negative integer");
    dst = static_cast<U>(v.get<std::uint64_t>());
  }

  void integer(const json& obj, const char* key, int& dst) const {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_number_integer()) fail(key, std::string("'") + key + "' must be an integer");
    dst = v.get<int>();
  }

  void boolean(const json& obj, const char* key, bool& dst) const {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_boolean()) fail(key, std::string("'") + key + "' must be true or false");
    dst = v.get<bool>();
  }

  void string(const json& obj, const char* key, std::string& dst) const {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(key);
    if (!v.is_string()) fail(key, std::string("'") + key + "' must be a string");
    dst = v.get<std::string>();
  }

  void path(const json& obj, const char* key, fs::path& dst) const {
    std::string s = dst.string();
    string(obj, key, s);
    dst = s;
  }

  std::size_t line_of(const std::string& key) const {
    if (key.empty()) return 0;
    const auto pos = text_.find("\"" + key + "\"");
    if (pos == std::string::npos) return 0;
    return static_cast<std::size_t>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(pos), '\n')) + 1;
  }

  std::size_t line_at_byte(std::size_t byte) const {
    const auto end = std::min(byte, text_.size());
    return static_cast<std::size_t>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(end), '\n')) + 1;
  }

  const std::string& source() const { return source_; }

 private:
  const std::string& text_;
  std::string source_;
};

json synth_json(const SynthConfig& s) {
  return {{"n_examples", s.n_examples},
          {"rare_rate", s.rare_rate},
          {"noise_std", s.noise_std},
          {"lane_count", s.lane_count},
          {"duration", s.duration}};
}

json flow_json(const FlowConfig& f) { return {{"coupling_layers", f.coupling_layers}, {"hidden", f.hidden}}; }

json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.epsilon},
          {"weight_decay", t.weight_decay},
          {"patience", t.patience},
          {"validation_fraction", t.validation_fraction}};
}

json kalman_json(const KalmanConfig& k) {
  return {{"process_noise_accel_std", k.process_noise_accel_std},
          {"measurement_noise_std", k.measurement_noise_std},
          {"initial_velocity_window", k.initial_velocity_window}};
}

json eval_json(const EvalConfig& e) {
  return {{"random_seeds", e.random_seeds},
          {"horizon_averaged", e.horizon_averaged},
          {"external_errors", e.external_errors.string()},
          {"histogram_bins", e.histogram_bins}};
}

std::string chain(const std::string& upstream, const json& section) {
  return detail::hex64(detail::fnv1a64(upstream + "|" + section.dump()));
}

[[noreturn]] void missing(const fs::path& p, Stage producer) {
  throw PrerequisiteError("missing " + p.string() + "; run `trajmine " + to_string(producer) + "` first");
}

std::string read_artifact(const fs::path& p, Stage producer) {
  if (!fs::exists(p)) missing(p, producer);
  return detail::read_file(p);
}

void check_hash(const std::string& found, const std::string& expected, const fs::path& p, Stage producer) {
  if (found != expected) {
    throw PrerequisiteError(p.string() + " was produced by a different configuration (hash " + found +
                            ", expected " + expected + "); rerun `trajmine " + to_string(producer) + "`");
  }
}

std::string csv_hash(const std::string& text) {
  static const std::string prefix = "# config_hash=";
  if (text.rfind(prefix, 0) != 0) return {};
  const auto end = text.find_first_of(" \n", prefix.size());
  return text.substr(prefix.size(), end - prefix.size());
}

std::string with_hash_line(const std::string& hash, const std::string& body) {
  return "# config_hash=" + hash + "\n" + body;
}

std::vector<VehicleTrack> load_tracks(const fs::path& p, const std::string& expected, Stage producer) {
  const auto text = read_artifact(p, producer);
  check_hash(csv_hash(text), expected, p, producer);
  std::istringstream in(text);
  auto res = ingest_csv(in, LengthUnit::meters);
  if (!res.rejected_rows.empty()) throw DataError(p.string() + " contains malformed rows");
  return std::move(res.tracks);
}

std::vector<Example> load_examples(const fs::path& p, const std::string& expected) {
  const auto text = read_artifact(p, Stage::ingest);
  std::istringstream in(text);
  auto file = read_examples(in);
  check_hash(file.config_hash, expected, p, Stage::ingest);
  return std::move(file.examples);
}

FeatureSet load_features(const fs::path& p, const std::string& expected) {
  auto set = deserialize_feature_set(read_artifact(p, Stage::features));
  check_hash(set.config_hash, expected, p, Stage::features);
  return set;
}

FlowModel load_model(const fs::path& p, const std::string& expected) {
  auto file = deserialize_model(read_artifact(p, Stage::train));
  check_hash(file.config_hash, expected, p, Stage::train);
  return std::move(file.model);
}

ScoreTable load_scores(const fs::path& p, const std::string& expected) {
  auto file = parse_score_table_csv(read_artifact(p, Stage::score));
  check_hash(file.config_hash, expected, p, Stage::score);
  return std::move(file.scores);
}

MinedSubsets load_mined(const fs::path& p, const std::string& expected) {
  const auto text = read_artifact(p, Stage::mine);
  MinedSubsets s;
  try {
    const auto doc = json::parse(text);
    check_hash(doc.at("config_hash").get<std::string>(), expected, p, Stage::mine);
    s.r = doc.at("r").get<double>();
    s.lambda = doc.at("lambda").get<double>();
    auto threshold = [](const json& v) {
      return v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
    };
    s.d_x = {threshold(doc.at("delta_x")), doc.at("d_x").get<std::vector<std::size_t>>()};
    s.d_z = {threshold(doc.at("delta_z")), doc.at("d_z").get<std::vector<std::size_t>>()};
    s.d_yx = {threshold(doc.at("delta_y")), doc.at("d_yx").get<std::vector<std::size_t>>()};
  } catch (const json::exception& e) {
    throw DataError("malformed " + p.string() + ": " + e.what());
  }
  return s;
}

std::optional<std::vector<std::uint8_t>> load_rare_flags(const PipelineConfig& cfg, const ArtifactPaths& paths,
                                                         const StageHashes& h, std::span<const Example> examples) {
  if (cfg.data.source != "synth") return std::nullopt;
  const auto file = parse_rare_flags_json(read_artifact(paths.rare_flags, Stage::gen));
  check_hash(file.config_hash, h.gen, paths.rare_flags, Stage::gen);
  std::vector<std::uint8_t> flags;
  flags.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto it = file.rare_flags.find(ex.target_id);
    flags.push_back(it != file.rare_flags.end() && it->second ? 1 : 0);
  }
  return flags;
}

StageResult stage_gen(const PipelineConfig& cfg, const ArtifactPaths& paths, const StageHashes& h) {
  if (cfg.data.source != "synth") throw ConfigError("gen needs data.source = synth; csv sources start at ingest");
  const auto& s = cfg.data.synth;
  DatasetOptions opts;
  opts.duration = s.duration;
  opts.lane_count = s.lane_count;
  opts.noise_std = s.noise_std;
  const auto dataset = gen_dataset(s.n_examples, s.rare_rate, cfg.seed, opts);
  std::ostringstream tracks;
  write_tracks_csv(tracks, dataset.tracks);
  detail::write_file_atomic(paths.tracks, with_hash_line(h.gen, tracks.str()));
  detail::write_file_atomic(paths.rare_flags, rare_flags_json(dataset, h.gen));
  return {{paths.tracks, paths.rare_flags}, {}};
}

StageResult stage_ingest(const PipelineConfig& cfg, const ArtifactPaths& paths, const StageHashes& h) {
  std::vector<VehicleTrack> tracks;
  std::vector<VehicleId> targets;
  if (cfg.data.source == "synth") {
    tracks = load_tracks(paths.tracks, h.gen, Stage::gen);
    const auto flags = parse_rare_flags_json(read_artifact(paths.rare_flags, Stage::gen));
    check_hash(flags.config_hash, h.gen, paths.rare_flags, Stage::gen);
    for (const auto& [id, rare] : flags.rare_flags) targets.push_back(id);
  } else {
    auto res = ingest_csv(cfg.data.csv_path, parse_length_unit(cfg.data.unit));
    tracks = std::move(res.tracks);
  }
  const auto examples = window_examples(tracks, cfg.data.stride, targets);
  if (examples.empty()) throw DataError("no track covers an 8 s window; nothing to mine");

  std::ostringstream scene;
  write_tracks_csv(scene, tracks);
  detail::write_file_atomic(paths.scene, with_hash_line(h.ingest, scene.str()));
  std::ostringstream ex;
  write_examples(ex, examples, h.ingest);
  detail::write_file_atomic(paths.examples, ex.str());
  return {{paths.scene, paths.examples}, {}};
}

StageResult stage_features(const PipelineConfig& cfg, const ArtifactPaths& paths, const StageHashes& h) {
  const auto examples = load_examples(paths.examples, h.ingest);
  const auto tracks = load_tracks(paths.scene, h.ingest, Stage::ingest);
  const SceneIndex scene(tracks);
  for (const auto& [scope, path] : {std::pair{Scope::X, &paths.features_x}, std::pair{Scope::Z, &paths.features_z}}) {
    auto set = extract_feature_set(examples, scope, cfg.scheme, scene);
    set.config_hash = h.features;
    detail::write_file_atomic(*path, serialize_feature_set(set));
  }
  return {{paths.features_x, paths.features_z}, {}};
}

StageResult stage_train(const PipelineConfig& cfg, const ArtifactPaths& paths, const StageHashes& h) {
  struct Job {
    const fs::path* features;
    const fs::path* model;
    const fs::path* log;
    std::uint64_t seed;
  };
  const Job jobs[] = {{&paths.features_x, &paths.model_x, &paths.trainlog_x, cfg.seed},
                      {&paths.features_z, &paths.model_z, &paths.trainlog_z, cfg.seed + 1}};
  StageResult result;
  for (const auto& job : jobs) {
    const auto set = load_features(*job.features, h.features);
    auto standardizer = fit_standardizer(set.values, set.observed);
    const Matrix x = standardizer.apply(set.values, set.observed);
    TrainConfig tc = cfg.train;
    tc.seed = job.seed;
    auto log_line = [&](const TrainLog& log) {
      std::ostringstream meta;
      meta << "# config_hash=" << h.train << " best_epoch=" << log.best_epoch
           << " best_val_nll=" << detail::format_double(log.best_val_nll)
           << " grad_check_max_rel=" << detail::format_double(log.final_grad_check.max_rel_error) << '\n';
      return meta.str() + log.to_csv();
    };
    TrainResult trained;
    try {
      trained = train(x, cfg.flow, tc);
    } catch (const TrainingError& e) {
      detail::write_file_atomic(*job.log, log_line(e.log()));
      throw;
    }
    trained.model.set_standardizer(std::move(standardizer));
    detail::write_file_atomic(*job.model, serialize_model(trained.model, h.train));
    detail::write_file_atomic(*job.log, log_line(trained.log));
    result.artifacts.push_back(*job.model);
    result.artifacts.push_back(*job.log);
  }
  return result;
}

StageResult stage_score(const PipelineConfig& cfg, const ArtifactPaths& paths, const StageHashes& h) {
  const auto model_x = load_model(paths.model_x, h.train);
  const auto model_z = load_model(paths.model_z, h.train);
  const auto fx = load_features(paths.features_x, h.features);
  const auto fz = load_features(paths.features_z, h.features);
  const auto scores = score_feature_sets(model_x, model_z, fx, fz, cfg.lambda);
  detail::write_file_atomic(paths.scores, score_table_csv(scores, nullptr, h.score));
  return {{paths.scores}, {}};
}

StageResult stage_mine(const PipelineConfig& cfg, const ArtifactPaths& paths, const StageHashes& h) {
  const auto scores = load_scores(paths.scores, h.score);
  StageResult result;
  for (const double r : cfg.r) {
    const auto subsets = mine_all(scores, r);
    detail::write_file_atomic(paths.mined_csv(r), score_table_csv(scores, &subsets, h.mine));
    detail::write_file_atomic(paths.mined_json(r), mined_summary_json(subsets, scores.size(), h.mine));
    result.artifacts.push_back(paths.mined_csv(r));
    result.artifacts.push_back(paths.mined_json(r));
  }
  return result;
}

ReportOptions report_options(const PipelineConfig& cfg, std::size_t n) {
  ReportOptions opts;
  opts.random_seed = cfg.seed;
  opts.random_seeds = cfg.eval.random_seeds;
  opts.horizon_averaged = cfg.eval.horizon_averaged;
  if (!cfg.eval.external_errors.empty()) {
    if (!fs::exists(cfg.eval.external_errors)) {
      throw ConfigError("eval.external_errors file not found: " + cfg.eval.external_errors.string());
    }
    opts.external_errors = parse_external_errors(detail::read_file(cfg.eval.external_errors), n);
  }
  return opts;
}

StageResult stage_eval(const PipelineConfig& cfg, const ArtifactPaths& paths, const StageHashes& h) {
  const auto examples = load_examples(paths.examples, h.ingest);
  const auto scores = load_scores(paths.scores, h.score);
  if (scores.size() != examples.size()) {
    throw PrerequisiteError("score table has " + std::to_string(scores.size()) + " rows but " +
                            std::to_string(examples.size()) + " examples exist; rerun `trajmine features`");
  }
  std::vector<MinedSubsets> mined;
  for (const double r : cfg.r) mined.push_back(load_mined(paths.mined_json(r), h.mine));

  auto opts = report_options(cfg, examples.size());
  opts.rare_flags = load_rare_flags(cfg, paths, h, examples);
  const auto errors = per_example_errors(examples, cfg.kalman, {cfg.eval.horizon_averaged});

  StageResult result;
  for (std::size_t i = 0; i < cfg.r.size(); ++i) {
    auto report = build_report(scores, mined[i], errors, cfg.r[i], opts);
    detail::write_file_atomic(paths.eval_json(cfg.r[i]), report_json(report, h.eval));
    result.artifacts.push_back(paths.eval_json(cfg.r[i]));
    result.reports.push_back(std::move(report));
  }
  if (!result.reports.empty()) {
    detail::write_file_atomic(paths.eval_examples_csv(), per_example_csv(result.reports.front(), scores, h.eval));
    result.artifacts.push_back(paths.eval_examples_csv());
  }
  const auto bins = score_histogram(scores, cfg.eval.histogram_bins);
  detail::write_file_atomic(paths.histogram_csv(), histogram_csv(bins, h.eval));
  result.artifacts.push_back(paths.histogram_csv());
  return result;
}

std::string scheme_dir_name(const PartitionScheme& s) {
  auto name = s.to_string();
  std::replace(name.begin(), name.end(), ':', '_');
  return name;
}

const PartitionScheme kAblationSchemes[] = {
    {PartitionMode::fix_seg_num, 1.0}, {PartitionMode::fix_seg_num, 3.0}, {PartitionMode::fix_seg_num, 5.0},
    {PartitionMode::fix_seg_len, 0.6}, {PartitionMode::fix_seg_len, 1.0}, {PartitionMode::fix_seg_len, 1.4}};

StageResult stage_ablate(const PipelineConfig& cfg, const ArtifactPaths& paths, const StageHashes& h) {
  const fs::path root = paths.root / "ablate";
  StageResult result;

  // Lambda sweep reuses the main models; only the hardness column changes.
  const auto examples = load_examples(paths.examples, h.ingest);
  const auto base_scores = load_scores(paths.scores, h.score);
  if (base_scores.size() != examples.size()) {
    throw PrerequisiteError("score table does not match the example file; rerun `trajmine score`");
  }
  auto opts = report_options(cfg, examples.size());
  opts.rare_flags = load_rare_flags(cfg, paths, h, examples);
  const auto errors = per_example_errors(examples, cfg.kalman, {cfg.eval.horizon_averaged});

  std::ostringstream lambda_csv;
  lambda_csv << "# config_hash=" << h.eval << '\n'
             << "lambda,r,err_full,err_yx,delta_err_yx,cov_ref_yx,rare_fraction_yx\n";
  for (int step = 0; step <= 10; ++step) {
    const double lambda = step / 10.0;
    const auto scores = with_lambda(base_scores, lambda);
    PipelineConfig cell = cfg;
    cell.lambda = lambda;
    const auto cell_hash = stage_hashes(cell).eval;
    const fs::path dir = root / ("lambda_" + detail::format_double(lambda));
    for (const double r : cfg.r) {
      auto report = build_report(scores, mine_all(scores, r), errors, r, opts);
      const auto path = dir / ("eval_r" + ratio_tag(r) + ".json");
      detail::write_file_atomic(path, report_json(report, cell_hash));
      const auto& yx = report.subset("D_YX");
      lambda_csv << detail::format_double(lambda) << ',' << ratio_tag(r) << ','
                 << detail::format_double(report.err_full) << ',' << detail::format_double(yx.err) << ','
                 << detail::format_double(yx.delta_err) << ',' << detail::format_double(yx.cov_ref) << ','
                 << (yx.rare_fraction ? detail::format_double(*yx.rare_fraction) : std::string()) << '\n';
      result.artifacts.push_back(path);
      result.reports.push_back(std::move(report));
    }
  }
  detail::write_file_atomic(root / "lambda_sweep.csv", lambda_csv.str());
  result.artifacts.push_back(root / "lambda_sweep.csv");

  // Scheme sweep retrains both flows per partition scheme.
  std::ostringstream scheme_csv;
  scheme_csv << "# config_hash=" << h.eval << '\n'
             << "scheme,r,dim_x,dim_z,err_full,delta_err_x,delta_err_z,delta_err_yx,cov_ref_x,cov_ref_z,cov_ref_yx\n";
  for (const auto& scheme : kAblationSchemes) {
    PipelineConfig cell = cfg;
    cell.scheme = scheme;
    cell.out = root / scheme_dir_name(scheme);
    const auto cell_paths = artifact_paths(cell.out);
    fs::create_directories(cell.out);
    fs::copy_file(paths.examples, cell_paths.examples, fs::copy_options::overwrite_existing);
    fs::copy_file(paths.scene, cell_paths.scene, fs::copy_options::overwrite_existing);
    if (cfg.data.source == "synth") {
      fs::copy_file(paths.rare_flags, cell_paths.rare_flags, fs::copy_options::overwrite_existing);
    }
    for (const auto stage : {Stage::features, Stage::train, Stage::score, Stage::mine}) run_stage(stage, cell);
    auto cell_result = run_stage(Stage::eval, cell);
    for (const auto& report : cell_result.reports) {
      scheme_csv << scheme.to_string() << ',' << ratio_tag(report.r) << ','
                 << feature_dimension(Scope::X, scheme) << ',' << feature_dimension(Scope::Z, scheme) << ','
                 << detail::format_double(report.err_full);
      for (const char* name : {"D_X", "D_Z", "D_YX"}) {
        scheme_csv << ',' << detail::format_double(report.subset(name).delta_err);
      }
      for (const char* name : {"D_X", "D_Z", "D_YX"}) {
        scheme_csv << ',' << detail::format_double(report.subset(name).cov_ref);
      }
      scheme_csv << '\n';
    }
    result.artifacts.insert(result.artifacts.end(), cell_result.artifacts.begin(), cell_result.artifacts.end());
    for (auto& report : cell_result.reports) result.reports.push_back(std::move(report));
  }
  detail::write_file_atomic(root / "scheme_sweep.csv", scheme_csv.str());
  result.artifacts.push_back(root / "scheme_sweep.csv");
  return result;
}

}  // namespace

std::string to_string(Stage stage) { return kStageNames[static_cast<std::size_t>(stage)]; }

Stage parse_stage(const std::string& text) {
  for (std::size_t i = 0; i < std::size(kStageNames); ++i) {
    if (text == kStageNames[i]) return static_cast<Stage>(i);
  }
  throw ArgumentError("unknown stage '" + text + "'");
}

void PipelineConfig::validate() const {
  if (data.source != "synth" && data.source != "csv") throw ConfigError("data.source must be synth or csv");
  if (data.source == "csv" && data.csv_path.empty()) throw ConfigError("data.csv_path is required for csv sources");
  try {
    parse_length_unit(data.unit);
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("data.unit: ") + e.what());
  }
  if (data.stride == 0) throw ConfigError("data.stride must be >= 1");
  const auto& s = data.synth;
  if (s.n_examples < 2) throw ConfigError("data.synth.n_examples must be >= 2");
  if (!(s.rare_rate >= 0.0 && s.rare_rate <= 1.0)) throw ConfigError("data.synth.rare_rate must lie in [0, 1]");
  if (!(s.noise_std >= 0.0)) throw ConfigError("data.synth.noise_std must be >= 0");
  if (s.lane_count < 2) throw ConfigError("data.synth.lane_count must be >= 2");
  if (!(s.duration >= 8.0)) throw ConfigError("data.synth.duration must be >= 8 seconds");
  try {
    feature_dimension(Scope::X, scheme);
    feature_dimension(Scope::Z, scheme);
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("features.scheme: ") + e.what());
  }
  if (flow.coupling_layers < 1 || flow.hidden < 1) throw ConfigError("flow sizes must be >= 1");
  if (train.epochs < 1 || train.batch_size < 1) throw ConfigError("train.epochs and train.batch_size must be >= 1");
  if (!(train.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (!(train.beta1 >= 0.0 && train.beta1 < 1.0) || !(train.beta2 >= 0.0 && train.beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  }
  if (!(train.epsilon > 0.0)) throw ConfigError("train.eps must be positive");
  if (!(train.weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(train.validation_fraction > 0.0 && train.validation_fraction < 1.0)) {
    throw ConfigError("train.validation_fraction must lie in (0, 1)");
  }
  if (!std::isfinite(lambda)) throw ConfigError("mining.lambda must be finite");
  if (r.empty()) throw ConfigError("mining.r must list at least one ratio");
  for (const double v : r) {
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError("mining.r values must lie in (0, 1]");
  }
  kalman.validate();
  if (eval.histogram_bins == 0) throw ConfigError("eval.histogram_bins must be >= 1");
}

PipelineConfig parse_config(const std::string& text, const std::string& source_name) {
  const ConfigReader rd(text, source_name);
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source_name + ":" + std::to_string(rd.line_at_byte(e.byte)) + ": " + e.what());
  }
  PipelineConfig cfg;
  rd.check_keys(doc, "", {"data", "features", "flow", "train", "mining", "kalman", "eval", "seed", "out"});
  rd.unsigned_int(doc, "seed", cfg.seed);
  rd.path(doc, "out", cfg.out);

  if (doc.contains("data")) {
    const auto& d = doc["data"];
    rd.check_keys(d, "data", {"source", "csv_path", "unit", "stride", "synth"});
    rd.string(d, "source", cfg.data.source);
    rd.path(d, "csv_path", cfg.data.csv_path);
    rd.string(d, "unit", cfg.data.unit);
    rd.unsigned_int(d, "stride", cfg.data.stride);
    if (d.contains("synth")) {
      const auto& s = d["synth"];
      rd.check_keys(s, "data.synth", {"n_examples", "rare_rate", "noise_std", "lane_count", "duration"});
      rd.unsigned_int(s, "n_examples", cfg.data.synth.n_examples);
      rd.number(s, "rare_rate", cfg.data.synth.rare_rate);
      rd.number(s, "noise_std", cfg.data.synth.noise_std);
      rd.integer(s, "lane_count", cfg.data.synth.lane_count);
      rd.number(s, "duration", cfg.data.synth.duration);
    }
  }
  if (doc.contains("features")) {
    const auto& f = doc["features"];
    rd.check_keys(f, "features", {"scheme"});
    std::string scheme = cfg.scheme.to_string();
    rd.string(f, "scheme", scheme);
    try {
      cfg.scheme = PartitionScheme::parse(scheme);
    } catch (const ArgumentError& e) {
      rd.fail("scheme", std::string("features.scheme: ") + e.what());
    }
  }
  if (doc.contains("flow")) {
    const auto& f = doc["flow"];
    rd.check_keys(f, "flow", {"coupling_layers", "hidden"});
    rd.unsigned_int(f, "coupling_layers", cfg.flow.coupling_layers);
    rd.unsigned_int(f, "hidden", cfg.flow.hidden);
  }
  if (doc.contains("train")) {
    const auto& t = doc["train"];
    rd.check_keys(t, "train", {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "eps", "weight_decay",
                               "patience", "validation_fraction"});
    rd.unsigned_int(t, "epochs", cfg.train.epochs);
    rd.unsigned_int(t, "batch_size", cfg.train.batch_size);
    rd.number(t, "learning_rate", cfg.train.learning_rate);
    rd.number(t, "beta1", cfg.train.beta1);
    rd.number(t, "beta2", cfg.train.beta2);
    rd.number(t, "eps", cfg.train.epsilon);
    rd.number(t, "weight_decay", cfg.train.weight_decay);
    rd.unsigned_int(t, "patience", cfg.train.patience);
    rd.number(t, "validation_fraction", cfg.train.validation_fraction);
  }
  if (doc.contains("mining")) {
    const auto& m = doc["mining"];
    rd.check_keys(m, "mining", {"lambda", "r"});
    rd.number(m, "lambda", cfg.lambda);
    if (m.contains("r")) {
      const auto& r = m["r"];
      if (!r.is_array()) rd.fail("r", "'r' must be an array of ratios");
      cfg.r.clear();
      for (const auto& v : r) {
        if (!v.is_number()) rd.fail("r", "'r' must contain only numbers");
        cfg.r.push_back(v.get<double>());
      }
    }
  }
  if (doc.contains("kalman")) {
    const auto& k = doc["kalman"];
    rd.check_keys(k, "kalman", {"process_noise_accel_std", "measurement_noise_std", "initial_velocity_window"});
    rd.number(k, "process_noise_accel_std", cfg.kalman.process_noise_accel_std);
    rd.number(k, "measurement_noise_std", cfg.kalman.measurement_noise_std);
    rd.unsigned_int(k, "initial_velocity_window", cfg.kalman.initial_velocity_window);
  }
  if (doc.contains("eval")) {
    const auto& e = doc["eval"];
    rd.check_keys(e, "eval", {"random_seeds", "horizon_averaged", "external_errors", "histogram_bins"});
    rd.unsigned_int(e, "random_seeds", cfg.eval.random_seeds);
    rd.boolean(e, "horizon_averaged", cfg.eval.horizon_averaged);
    rd.path(e, "external_errors", cfg.eval.external_errors);
    rd.unsigned_int(e, "histogram_bins", cfg.eval.histogram_bins);
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    // Messages start with the dotted key, e.g. "mining.r values ...".
    const std::string what = e.what();
    std::string key = what.substr(0, what.find_first_of(" :"));
    key = key.substr(key.find_last_of('.') + 1);
    rd.fail(key, what);
  }
  return cfg;
}

PipelineConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse_config(detail::read_file(path), path.string());
}

std::string config_to_json(const PipelineConfig& c) {
  json doc{{"data",
            {{"source", c.data.source},
             {"csv_path", c.data.csv_path.string()},
             {"unit", c.data.unit},
             {"stride", c.data.stride},
             {"synth", synth_json(c.data.synth)}}},
           {"features", {{"scheme", c.scheme.to_string()}}},
           {"flow", flow_json(c.flow)},
           {"train", train_json(c.train)},
           {"mining", {{"lambda", c.lambda}, {"r", c.r}}},
           {"kalman", kalman_json(c.kalman)},
           {"eval", eval_json(c.eval)},
           {"seed", c.seed},
           {"out", c.out.string()}};
  return doc.dump(2) + "\n";
}

std::vector<double> parse_ratio_list(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = std::min(text.find(',', start), text.size());
    const auto item = text.substr(start, comma - start);
    double v = 0.0;
    const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || res.ec != std::errc{} || res.ptr != item.data() + item.size()) {
      throw ConfigError("invalid ratio '" + item + "' in --r");
    }
    out.push_back(v);
    start = comma + 1;
  }
  return out;
}

void apply_overrides(PipelineConfig& config, const ConfigOverrides& o) {
  if (o.out) config.out = *o.out;
  if (o.seed) config.seed = *o.seed;
  if (o.r) config.r = *o.r;
  if (o.lambda) config.lambda = *o.lambda;
  if (o.scheme) {
    try {
      config.scheme = PartitionScheme::parse(*o.scheme);
    } catch (const ArgumentError& e) {
      throw ConfigError(std::string("--scheme: ") + e.what());
    }
  }
  config.validate();
}

StageHashes stage_hashes(const PipelineConfig& c) {
  StageHashes h;
  h.gen = chain("gen", {{"synth", synth_json(c.data.synth)}, {"seed", c.seed}});
  std::string source_hash;
  if (c.data.source == "synth") {
    source_hash = h.gen;
  } else {
    if (!fs::exists(c.data.csv_path)) throw ConfigError("data.csv_path not found: " + c.data.csv_path.string());
    source_hash = detail::hex64(detail::fnv1a64(detail::read_file(c.data.csv_path)));
  }
  h.ingest = chain(source_hash, {{"source", c.data.source}, {"unit", c.data.unit}, {"stride", c.data.stride}});
  h.features = chain(h.ingest, {{"scheme", c.scheme.to_string()}});
  h.train = chain(h.features, {{"flow", flow_json(c.flow)}, {"train", train_json(c.train)}, {"seed", c.seed}});
  h.score = chain(h.train, {{"lambda", c.lambda}});
  h.mine = chain(h.score, {{"r", c.r}});
  std::string external;
  if (!c.eval.external_errors.empty() && fs::exists(c.eval.external_errors)) {
    external = detail::hex64(detail::fnv1a64(detail::read_file(c.eval.external_errors)));
  }
  json eval_section = eval_json(c.eval);
  eval_section["external_errors"] = external;
  h.eval = chain(h.mine, {{"kalman", kalman_json(c.kalman)}, {"eval", eval_section}, {"seed", c.seed}});
  return h;
}

std::string ratio_tag(double r) { return detail::format_double(r); }

fs::path ArtifactPaths::mined_csv(double r) const { return root / ("mined_r" + ratio_tag(r) + ".csv"); }
fs::path ArtifactPaths::mined_json(double r) const { return root / ("mined_r" + ratio_tag(r) + ".json"); }
fs::path ArtifactPaths::eval_json(double r) const { return root / ("eval_r" + ratio_tag(r) + ".json"); }
fs::path ArtifactPaths::eval_examples_csv() const { return root / "eval_examples.csv"; }
fs::path ArtifactPaths::histogram_csv() const { return root / "score_histogram.csv"; }

ArtifactPaths artifact_paths(const fs::path& out) {
  ArtifactPaths p;
  p.root = out;
  p.tracks = out / "tracks.csv";
  p.rare_flags = out / "rare_flags.json";
  p.scene = out / "scene.csv";
  p.examples = out / "examples.jsonl";
  p.features_x = out / "features_x.feat";
  p.features_z = out / "features_z.feat";
  p.model_x = out / "model_x.flow";
  p.model_z = out / "model_z.flow";
  p.trainlog_x = out / "trainlog_x.csv";
  p.trainlog_z = out / "trainlog_z.csv";
  p.scores = out / "scores.csv";
  return p;
}

StageResult run_stage(Stage stage, const PipelineConfig& config) {
  config.validate();
  const auto paths = artifact_paths(config.out);
  const auto hashes = stage_hashes(config);
  fs::create_directories(config.out);
  switch (stage) {
    case Stage::gen: return stage_gen(config, paths, hashes);
    case Stage::ingest: return stage_ingest(config, paths, hashes);
    case Stage::features: return stage_features(config, paths, hashes);
    case Stage::train: return stage_train(config, paths, hashes);
    case Stage::score: return stage_score(config, paths, hashes);
    case Stage::mine: return stage_mine(config, paths, hashes);
    case Stage::eval: return stage_eval(config, paths, hashes);
    case Stage::ablate: return stage_ablate(config, paths, hashes);
  }
  throw ArgumentError("unknown stage");
}

StageResult run_pipeline(const PipelineConfig& config) {
  StageResult all;
  std::vector<Stage> stages;
  if (config.data.source == "synth") stages.push_back(Stage::gen);
  for (const auto s : {Stage::ingest, Stage::features, Stage::train, Stage::score, Stage::mine, Stage::eval}) {
    stages.push_back(s);
  }
  for (const auto s : stages) {
    auto r = run_stage(s, config);
    all.artifacts.insert(all.artifacts.end(), r.artifacts.begin(), r.artifacts.end());
    for (auto& rep : r.reports) all.reports.push_back(std::move(rep));
  }
  return all;
}

}  // namespace trajmine

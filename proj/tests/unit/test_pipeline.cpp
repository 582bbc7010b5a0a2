#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "test_support.hpp"
#include "trajmine/errors.hpp"
#include "trajmine/pipeline.hpp"

namespace trajmine {
namespace {

namespace fs = std::filesystem;

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

PipelineConfig tiny_config(const fs::path& out) {
  auto cfg = parse_config(R"({
    "data": {"source": "synth", "synth": {"n_examples": 240, "rare_rate": 0.1}},
    "flow": {"coupling_layers": 2, "hidden": 8},
    "train": {"epochs": 3, "batch_size": 32},
    "mining": {"r": [0.1, 0.2]},
    "eval": {"random_seeds": 3, "histogram_bins": 10},
    "seed": 4
  })");
  cfg.out = out;
  return cfg;
}

TEST(ConfigParse, DefaultsFromEmptyObject) {
  const auto cfg = parse_config("{}");
  EXPECT_EQ(cfg.data.source, "synth");
  EXPECT_EQ(cfg.data.stride, 50u);
  EXPECT_EQ(cfg.scheme.to_string(), "fixsegnum:5");
  EXPECT_EQ(cfg.lambda, 0.5);
  EXPECT_EQ(cfg.r, (std::vector<double>{0.05, 0.10, 0.15, 0.20}));
  EXPECT_EQ(cfg.flow.coupling_layers, 4u);
  EXPECT_EQ(cfg.flow.hidden, 64u);
  EXPECT_EQ(cfg.train.epochs, 200u);
  EXPECT_EQ(cfg.kalman.measurement_noise_std, 0.5);
}

TEST(ConfigParse, FullDocumentRoundTrips) {
  auto cfg = tiny_config("x");
  cfg.kalman.process_noise_accel_std = 0.7;
  cfg.eval.horizon_averaged = true;
  const auto again = parse_config(config_to_json(cfg));
  EXPECT_EQ(config_to_json(again), config_to_json(cfg));
  EXPECT_EQ(stage_hashes(again).eval, stage_hashes(cfg).eval);
}

std::string config_error(const std::string& text) {
  try {
    parse_config(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "no error";
}

TEST(ConfigParse, ErrorsCarryLineNumbers) {
  EXPECT_NE(config_error("{\n  \"seed\": 1,\n  \"bogus\": 2\n}").find("cfg.json:3"), std::string::npos);
  EXPECT_NE(config_error("{\n  \"train\": {\n    \"epochs\": \"many\"\n  }\n}").find("cfg.json:3"), std::string::npos);
  EXPECT_NE(config_error("{\n  \"seed\": 1,\n  \"out\": \n}").find("cfg.json:4"), std::string::npos);
  EXPECT_NE(config_error("{\n\n  \"mining\": {\"r\": [0.5, 1.5]}\n}").find("cfg.json:3"), std::string::npos);
  EXPECT_NE(config_error("{\"features\": {\"scheme\": \"fixsegnum:0\"}}").find("scheme"), std::string::npos);
  EXPECT_NE(config_error("{\"data\": {\"unit\": \"furlongs\"}}").find("unit"), std::string::npos);
}

TEST(ConfigParse, OverridesWin) {
  auto cfg = parse_config("{}");
  ConfigOverrides o;
  o.out = "elsewhere";
  o.seed = 9;
  o.r = parse_ratio_list("0.05,0.3");
  o.lambda = 0.25;
  o.scheme = "fixseglen:1.4";
  apply_overrides(cfg, o);
  EXPECT_EQ(cfg.out, fs::path("elsewhere"));
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.r, (std::vector<double>{0.05, 0.3}));
  EXPECT_EQ(cfg.lambda, 0.25);
  EXPECT_EQ(cfg.scheme.to_string(), "fixseglen:1.4");
  o = {};
  o.r = std::vector<double>{0.0};
  EXPECT_THROW(apply_overrides(cfg, o), ConfigError);
  EXPECT_THROW(parse_ratio_list("0.1,abc"), ConfigError);
}

TEST(StageHashesTest, ChangesPropagateDownstreamOnly) {
  const auto base = parse_config("{}");
  const auto h0 = stage_hashes(base);

  auto lambda = base;
  lambda.lambda = 0.3;
  const auto h1 = stage_hashes(lambda);
  EXPECT_EQ(h1.train, h0.train);
  EXPECT_NE(h1.score, h0.score);
  EXPECT_NE(h1.mine, h0.mine);
  EXPECT_NE(h1.eval, h0.eval);

  auto scheme = base;
  scheme.scheme = PartitionScheme::parse("fixsegnum:3");
  const auto h2 = stage_hashes(scheme);
  EXPECT_EQ(h2.ingest, h0.ingest);
  EXPECT_NE(h2.features, h0.features);
  EXPECT_NE(h2.train, h0.train);

  auto synth = base;
  synth.data.synth.rare_rate = 0.1;
  const auto h3 = stage_hashes(synth);
  EXPECT_NE(h3.gen, h0.gen);
  EXPECT_NE(h3.eval, h0.eval);

  auto kalman = base;
  kalman.kalman.measurement_noise_std = 0.2;
  const auto h4 = stage_hashes(kalman);
  EXPECT_EQ(h4.mine, h0.mine);
  EXPECT_NE(h4.eval, h0.eval);

  auto out = base;
  out.out = "somewhere/else";
  EXPECT_EQ(stage_hashes(out).eval, h0.eval);
}

TEST(Stages, MissingPrerequisiteNamesStage) {
  const auto cfg = tiny_config(test::scratch_dir("prereq"));
  try {
    run_stage(Stage::mine, cfg);
    FAIL();
  } catch (const PrerequisiteError& e) {
    EXPECT_NE(std::string(e.what()).find("run `trajmine score` first"), std::string::npos) << e.what();
  }
  EXPECT_THROW(run_stage(Stage::features, cfg), PrerequisiteError);
  EXPECT_THROW(run_stage(Stage::ingest, cfg), PrerequisiteError);
}

TEST(Stages, GenRejectsCsvSource) {
  auto cfg = tiny_config(test::scratch_dir("gen_csv"));
  cfg.data.source = "csv";
  cfg.data.csv_path = "tracks.csv";
  EXPECT_THROW(run_stage(Stage::gen, cfg), ConfigError);
}

class PipelineRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(test::scratch_dir("pipeline_run"));
    result_ = new StageResult(run_pipeline(tiny_config(*dir_)));
  }
  static void TearDownTestSuite() {
    delete result_;
    delete dir_;
  }
  static fs::path* dir_;
  static StageResult* result_;
};
fs::path* PipelineRun::dir_ = nullptr;
StageResult* PipelineRun::result_ = nullptr;

TEST_F(PipelineRun, ProducesEveryArtifactWithItsHash) {
  const auto cfg = tiny_config(*dir_);
  const auto paths = artifact_paths(*dir_);
  const auto h = stage_hashes(cfg);
  for (const auto& p : {paths.tracks, paths.rare_flags, paths.scene, paths.examples, paths.features_x,
                        paths.features_z, paths.model_x, paths.model_z, paths.trainlog_x, paths.trainlog_z,
                        paths.scores, paths.mined_csv(0.1), paths.mined_json(0.2), paths.eval_json(0.1),
                        paths.eval_examples_csv(), paths.histogram_csv()}) {
    ASSERT_TRUE(fs::exists(p)) << p;
  }
  EXPECT_EQ(read(paths.tracks).rfind("# config_hash=" + h.gen + "\n", 0), 0u);
  EXPECT_EQ(read(paths.scores).rfind("# config_hash=" + h.score + " lambda=0.5\n", 0), 0u);
  EXPECT_EQ(read(paths.trainlog_x).rfind("# config_hash=" + h.train + " best_epoch=", 0), 0u);
  EXPECT_NE(read(paths.model_z).find(h.train), std::string::npos);
  EXPECT_EQ(nlohmann::json::parse(read(paths.mined_json(0.1)))["config_hash"], h.mine);
  const auto report = nlohmann::json::parse(read(paths.eval_json(0.2)));
  EXPECT_EQ(report["config_hash"], h.eval);
  EXPECT_EQ(result_->reports.size(), 2u);
  EXPECT_EQ(result_->reports[0].n, 240u);
}

TEST_F(PipelineRun, MinedSubsetsHaveExactSizeAndNest) {
  const auto paths = artifact_paths(*dir_);
  const auto a = nlohmann::json::parse(read(paths.mined_json(0.1)));
  const auto b = nlohmann::json::parse(read(paths.mined_json(0.2)));
  for (const char* key : {"d_x", "d_z", "d_yx"}) {
    const auto small = a[key].get<std::vector<std::size_t>>();
    const auto big = b[key].get<std::vector<std::size_t>>();
    EXPECT_EQ(small.size(), 24u);
    EXPECT_EQ(big.size(), 48u);
    EXPECT_TRUE(std::equal(small.begin(), small.end(), big.begin()));
  }
}

TEST_F(PipelineRun, RerunningAStageIsByteIdentical) {
  const auto cfg = tiny_config(*dir_);
  const auto paths = artifact_paths(*dir_);
  const auto scores = read(paths.scores);
  const auto model = read(paths.model_x);
  const auto report = read(paths.eval_json(0.1));
  run_stage(Stage::train, cfg);
  run_stage(Stage::score, cfg);
  run_stage(Stage::mine, cfg);
  run_stage(Stage::eval, cfg);
  EXPECT_EQ(read(paths.model_x), model);
  EXPECT_EQ(read(paths.scores), scores);
  EXPECT_EQ(read(paths.eval_json(0.1)), report);
}

TEST_F(PipelineRun, EvalRefusesMixedHashes) {
  auto cfg = tiny_config(*dir_);
  cfg.lambda = 0.9;
  try {
    run_stage(Stage::eval, cfg);
    FAIL();
  } catch (const PrerequisiteError& e) {
    EXPECT_NE(std::string(e.what()).find("different configuration"), std::string::npos) << e.what();
  }
  cfg.lambda = 0.5;
  cfg.kalman.measurement_noise_std = 0.3;
  EXPECT_NO_THROW(run_stage(Stage::eval, cfg));
  run_stage(Stage::eval, tiny_config(*dir_));
}

TEST(PipelineDeterminism, TwoRunsAreByteIdentical) {
  const auto a = test::scratch_dir("det_a");
  const auto b = test::scratch_dir("det_b");
  run_pipeline(tiny_config(a));
  run_pipeline(tiny_config(b));
  const auto pa = artifact_paths(a);
  const auto pb = artifact_paths(b);
  EXPECT_EQ(read(pa.scores), read(pb.scores));
  for (const double r : {0.1, 0.2}) {
    EXPECT_EQ(read(pa.mined_csv(r)), read(pb.mined_csv(r)));
    EXPECT_EQ(read(pa.mined_json(r)), read(pb.mined_json(r)));
    EXPECT_EQ(read(pa.eval_json(r)), read(pb.eval_json(r)));
  }
  EXPECT_EQ(read(pa.eval_examples_csv()), read(pb.eval_examples_csv()));
}

TEST(PipelineCsvSource, IngestsExternalTracks) {
  const auto gen_dir = test::scratch_dir("csv_src_gen");
  auto gen_cfg = tiny_config(gen_dir);
  run_stage(Stage::gen, gen_cfg);

  const auto dir = test::scratch_dir("csv_src");
  auto cfg = tiny_config(dir);
  cfg.data.source = "csv";
  cfg.data.unit = "meters";
  cfg.data.csv_path = artifact_paths(gen_dir).tracks;
  run_stage(Stage::ingest, cfg);
  run_stage(Stage::features, cfg);
  const auto paths = artifact_paths(dir);
  EXPECT_FALSE(fs::exists(paths.rare_flags));
  const auto set = deserialize_feature_set(read(paths.features_x));
  // Every vehicle with a long enough track is a target.
  EXPECT_GT(set.values.rows, 240u);
  EXPECT_EQ(set.values.cols, 130u);

  const auto before = stage_hashes(cfg).ingest;
  write(cfg.data.csv_path, read(cfg.data.csv_path) + "\n");
  EXPECT_NE(stage_hashes(cfg).ingest, before);
  EXPECT_THROW(run_stage(Stage::features, cfg), PrerequisiteError);
}

TEST(PipelineAblate, ProducesGridCells) {
  const auto dir = test::scratch_dir("ablate");
  auto cfg = tiny_config(dir);
  cfg.r = {0.2};
  run_pipeline(cfg);
  const auto res = run_stage(Stage::ablate, cfg);
  EXPECT_EQ(res.reports.size(), 11u + 6u);
  const auto root = dir / "ablate";
  for (const char* cell : {"fixsegnum_1", "fixsegnum_3", "fixsegnum_5", "fixseglen_0.6", "fixseglen_1", "fixseglen_1.4"}) {
    EXPECT_TRUE(fs::exists(root / cell / "eval_r0.2.json")) << cell;
  }
  EXPECT_TRUE(fs::exists(root / "lambda_0" / "eval_r0.2.json"));
  EXPECT_TRUE(fs::exists(root / "lambda_1" / "eval_r0.2.json"));
  const auto sweep = read(root / "scheme_sweep.csv");
  EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 8);
  EXPECT_NE(sweep.find("fixseglen:0.6,0.2,130,364,"), std::string::npos) << sweep;
  const auto lambda = read(root / "lambda_sweep.csv");
  EXPECT_EQ(std::count(lambda.begin(), lambda.end(), '\n'), 13);
}

}  // namespace
}  // namespace trajmine

#include <cstdint>
#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "trajmine/errors.hpp"
#include "trajmine/pipeline.hpp"

namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kPrerequisite = 3, kNumeric = 4 };

int report(const char* kind, const std::exception& e, int code) {
  std::fprintf(stderr, "trajmine: %s: %s\n", kind, e.what());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Critical-example mining for vehicle trajectory datasets"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> ratios;
  std::optional<double> lambda;
  std::optional<std::string> scheme;

  const char* stages[] = {"gen", "ingest", "features", "train", "score", "mine", "eval", "ablate", "all"};
  const char* help[] = {"generate a synthetic dataset",
                        "window tracks into 8 s examples",
                        "extract X and Z feature vectors",
                        "fit the X and Z flows",
                        "score every example under both flows",
                        "select D_X, D_Z and D_YX for each r",
                        "evaluate mined subsets with the Kalman baseline",
                        "lambda and partition-scheme sweeps",
                        "run gen (synthetic only) through eval"};
  for (std::size_t i = 0; i < std::size(stages); ++i) {
    auto* sub = app.add_subcommand(stages[i], help[i]);
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--out", out, "output directory");
    sub->add_option("--seed", seed, "master seed");
    sub->add_option("--r", ratios, "comma-separated mining ratios, e.g. 0.05,0.1");
    sub->add_option("--lambda", lambda, "hardness scaling lambda");
    sub->add_option("--scheme", scheme, "partition scheme, e.g. fixsegnum:5 or fixseglen:1.4");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    auto config = trajmine::load_config(config_path);
    trajmine::ConfigOverrides overrides;
    if (out) overrides.out = *out;
    overrides.seed = seed;
    if (ratios) overrides.r = trajmine::parse_ratio_list(*ratios);
    overrides.lambda = lambda;
    overrides.scheme = scheme;
    trajmine::apply_overrides(config, overrides);

    const std::string name = app.get_subcommands().front()->get_name();
    const auto result = name == "all" ? trajmine::run_pipeline(config)
                                      : trajmine::run_stage(trajmine::parse_stage(name), config);
    for (const auto& path : result.artifacts) std::printf("%s\n", path.string().c_str());
    for (const auto& rep : result.reports) {
      const auto& yx = rep.subset("D_YX");
      std::fprintf(stderr, "r=%g lambda=%g Err(D)=%.3f Err(D_YX)=%.3f dErr=%+.1f%% Cov_ref=%.1f%%\n", rep.r,
                   rep.lambda, rep.err_full, yx.err, 100.0 * yx.delta_err, 100.0 * yx.cov_ref);
    }
    return kOk;
  } catch (const trajmine::PrerequisiteError& e) {
    return report("prerequisite error", e, kPrerequisite);
  } catch (const trajmine::ConfigError& e) {
    return report("config error", e, kConfig);
  } catch (const trajmine::SchemaError& e) {
    return report("input schema error", e, kConfig);
  } catch (const trajmine::DataError& e) {
    return report("input data error", e, kConfig);
  } catch (const trajmine::ArgumentError& e) {
    return report("argument error", e, kConfig);
  } catch (const trajmine::NumericError& e) {
    return report("numeric error", e, kNumeric);
  } catch (const trajmine::MetricError& e) {
    return report("metric error", e, kNumeric);
  } catch (const std::exception& e) {
    return report("error", e, kFailure);
  }
}

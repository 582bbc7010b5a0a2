#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajmine/data_model.hpp"
#include "trajmine/mining.hpp"

namespace trajmine {

struct KalmanConfig {
  double process_noise_accel_std = 1.0;  // m/s^2
  double measurement_noise_std = 0.5;    // m
  std::size_t initial_velocity_window = 2;

  void validate() const;
};

struct Position {
  double x = 0.0;  // lateral
  double y = 0.0;  // longitudinal
};

// Filters `history` (oldest first) and rolls the constant-velocity model
// forward `horizon` frames without measurements.
std::vector<Position> kalman_cv_predict(std::span<const Position> history, std::size_t horizon,
                                        const KalmanConfig& config);
std::vector<Position> kalman_cv_predict(const Example& example, const KalmanConfig& config);

std::vector<Position> positions(std::span<const TrajectoryPoint> points);

// Euclidean displacement at the last horizon frame.
double terminal_error(std::span<const Position> predicted, std::span<const Position> truth);
// Root mean square of the per-frame displacement over the horizon.
double horizon_rmse(std::span<const Position> predicted, std::span<const Position> truth);
// RMSE of the terminal displacement of a single trajectory (its terminal error).
double rmse5(std::span<const Position> predicted, std::span<const Position> truth);

// sqrt(mean of squared per-example errors) over `subset`.
double subset_rmse(std::span<const double> per_example_error, std::span<const std::size_t> subset);
double dataset_rmse(std::span<const double> per_example_error);

struct ErrorOptions {
  bool horizon_averaged = false;
};
std::vector<double> per_example_errors(std::span<const Example> examples, const KalmanConfig& config,
                                       const ErrorOptions& options = {});

// floor(r*N) largest errors, ties by ascending index, listed in rank order.
std::vector<std::size_t> reference_labels(std::span<const double> per_example_error, double r);
std::vector<std::size_t> reference_labels(std::span<const Example> examples, double r, const KalmanConfig& config);

double delta_err(double err_subset, double err_full);
double coverage(std::span<const std::size_t> mined, std::span<const std::size_t> target);
std::vector<std::size_t> random_baseline(std::size_t n, double r, std::uint64_t seed);

struct SubsetMetrics {
  std::string name;
  std::size_t size = 0;
  double err = 0.0;
  double delta_err = 0.0;
  double cov_ref = 0.0;
  std::optional<double> cov_model;  // against an external model's top-error set
  std::optional<double> rare_fraction;
};

struct RandomSummary {
  std::size_t seeds = 0;
  double mean_err = 0.0;
  double mean_delta_err = 0.0;
  double mean_abs_delta_err = 0.0;
  double mean_cov_ref = 0.0;
  std::optional<double> mean_rare_fraction;
};

struct EvalReport {
  double r = 0.0;
  double lambda = 0.0;
  std::uint64_t random_seed = 0;
  std::size_t n = 0;
  double err_full = 0.0;
  bool horizon_averaged = false;
  std::vector<SubsetMetrics> subsets;  // d_x, d_z, d_yx, random, reference
  RandomSummary random_mean;
  std::vector<double> per_example_error;

  const SubsetMetrics& subset(const std::string& name) const;
};

struct ReportOptions {
  std::uint64_t random_seed = 1;
  std::size_t random_seeds = 20;
  bool horizon_averaged = false;
  std::optional<std::vector<double>> external_errors;
  std::optional<std::vector<std::uint8_t>> rare_flags;  // per example, synthetic data only
};

EvalReport build_report(const ScoreTable& scores, const MinedSubsets& subsets, std::span<const double> per_example_error,
                        double r, const ReportOptions& options = {});

std::string report_json(const EvalReport& report, const std::string& config_hash);
std::string per_example_csv(const EvalReport& report, const ScoreTable& scores, const std::string& config_hash);

struct HistogramBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count_x = 0;
  std::size_t count_z = 0;
  std::size_t count_yx = 0;
};
// Equal-width bins spanning the pooled range of the three score columns.
std::vector<HistogramBin> score_histogram(const ScoreTable& scores, std::size_t bins);
std::string histogram_csv(std::span<const HistogramBin> bins, const std::string& config_hash);

// Reads an external model's per-example errors (example_index,error_m).
std::vector<double> parse_external_errors(const std::string& text, std::size_t n);

}  // namespace trajmine

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trajmine/errors.hpp"
#include "trajmine/flow.hpp"
#include "trajmine/matrix.hpp"

namespace trajmine {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-5;  // decoupled, applied to coupling weights only
  std::uint64_t seed = 1;
  std::size_t patience = 20;
  double validation_fraction = 0.1;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_nll = 0.0;
  double val_nll = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::string worst_path;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

struct TrainLog {
  double initial_val_nll = 0.0;
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;  // 0 when no epoch improved on the initial parameters
  double best_val_nll = 0.0;
  GradCheckReport final_grad_check;

  std::string to_csv() const;
};

class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& what, TrainLog log) : NumericError(what), log_(std::move(log)) {}
  const TrainLog& log() const { return log_; }

 private:
  TrainLog log_;
};

// Mean of -log_prob over the rows of `batch`.
double nll(const FlowModel& model, const Matrix& batch);

struct NllGradient {
  double value = 0.0;
  std::vector<double> gradient;  // flat, same order as FlowModel::parameters()
};
NllGradient grad_nll(const FlowModel& model, const Matrix& batch);

struct GradCheckOptions {
  std::size_t max_full_check = 10000;  // above this many parameters a random subset is checked
  std::size_t subsample = 256;
  std::uint64_t seed = 7;
  double scale_floor = 1e-3;  // relative error denominator is max(|a|, |n|, floor)
};

// Compares `analytic` against central differences of nll.
GradCheckReport compare_gradient(const FlowModel& model, const Matrix& batch, std::span<const double> analytic,
                                 double epsilon, const GradCheckOptions& options = {});
GradCheckReport finite_diff_check(const FlowModel& model, const Matrix& batch, double epsilon,
                                  const GradCheckOptions& options = {});

struct TrainResult {
  FlowModel model;
  TrainLog log;
};

// Fits a flow to standardized rows by minimizing mean NLL with Adam. Holds
// out a seeded validation split for early stopping and returns the parameters
// of the best validation epoch.
TrainResult train(const Matrix& features, const FlowConfig& flow_config, const TrainConfig& config);

}  // namespace trajmine

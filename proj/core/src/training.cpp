#include "trajmine/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "flow_engine.hpp"
#include "text_io.hpp"
#include "trajmine/data_model.hpp"

namespace trajmine {

namespace {

detail::Mat gather_columns(const detail::Mat& all, std::span<const std::size_t> idx) {
  detail::Mat out(all.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = all.col(static_cast<Eigen::Index>(idx[k]));
  return out;
}

// Flat-parameter mask of entries subject to weight decay (coupling weights).
std::vector<std::uint8_t> weight_mask(FlowModel& model) {
  std::vector<std::uint8_t> mask(model.parameter_count(), 0);
  const double* base = model.parameters().data();
  for (std::size_t l = 0; l < model.num_couplings(); ++l) {
    const auto c = model.coupling(l);
    for (const auto w : {c.w1, c.w2, c.w3}) {
      const auto off = static_cast<std::size_t>(w.data() - base);
      std::fill(mask.begin() + static_cast<std::ptrdiff_t>(off),
                mask.begin() + static_cast<std::ptrdiff_t>(off + w.size()), 1);
    }
  }
  return mask;
}

}  // namespace

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out << "epoch,train_nll,val_nll\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << detail::format_double(e.train_nll) << ',' << detail::format_double(e.val_nll) << '\n';
  }
  return out.str();
}

double nll(const FlowModel& model, const Matrix& batch) {
  if (batch.rows == 0) throw ArgumentError("nll of an empty batch");
  return detail::nll_batch(model, detail::to_columns(batch), nullptr);
}

NllGradient grad_nll(const FlowModel& model, const Matrix& batch) {
  if (batch.rows == 0) throw ArgumentError("nll of an empty batch");
  NllGradient out;
  out.value = detail::nll_batch(model, detail::to_columns(batch), &out.gradient);
  return out;
}

GradCheckReport compare_gradient(const FlowModel& model, const Matrix& batch, std::span<const double> analytic,
                                 double epsilon, const GradCheckOptions& options) {
  if (!(epsilon > 0.0)) throw ArgumentError("finite-difference epsilon must be positive");
  if (analytic.size() != model.parameter_count()) throw ArgumentError("gradient size mismatch");
  const std::size_t count = model.parameter_count();
  std::vector<std::size_t> indices;
  if (count <= options.max_full_check) {
    indices.resize(count);
    std::iota(indices.begin(), indices.end(), std::size_t{0});
  } else {
    std::mt19937_64 rng(options.seed);
    std::vector<std::size_t> all(count);
    std::iota(all.begin(), all.end(), std::size_t{0});
    const std::size_t k = std::min(options.subsample, count);
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, count - 1);
      std::swap(all[i], all[pick(rng)]);
    }
    indices.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
    std::sort(indices.begin(), indices.end());
  }

  const detail::Mat x = detail::to_columns(batch);
  FlowModel probe = model;
  auto params = probe.parameters();
  GradCheckReport report;
  report.checked = indices.size();
  report.max_rel_error = -1.0;
  for (const auto i : indices) {
    const double saved = params[i];
    params[i] = saved + epsilon;
    const double plus = detail::nll_batch(probe, x, nullptr);
    params[i] = saved - epsilon;
    const double minus = detail::nll_batch(probe, x, nullptr);
    params[i] = saved;
    const double numeric = (plus - minus) / (2.0 * epsilon);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), options.scale_floor});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.analytic = a;
      report.numeric = numeric;
    }
  }
  if (report.max_rel_error < 0.0) report.max_rel_error = 0.0;
  report.worst_path = model.parameter_path(report.worst_index);
  return report;
}

GradCheckReport finite_diff_check(const FlowModel& model, const Matrix& batch, double epsilon,
                                  const GradCheckOptions& options) {
  const auto g = grad_nll(model, batch);
  return compare_gradient(model, batch, g.gradient, epsilon, options);
}

TrainResult train(const Matrix& features, const FlowConfig& flow_config, const TrainConfig& config) {
  if (config.batch_size == 0) throw ArgumentError("batch_size must be >= 1");
  if (!(config.learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
  if (config.weight_decay < 0.0) throw ArgumentError("weight_decay must be >= 0");
  if (features.rows < 2 * config.batch_size) {
    throw ArgumentError("training needs at least 2 * batch_size rows (" + std::to_string(features.rows) +
                        " < " + std::to_string(2 * config.batch_size) + ")");
  }

  const auto split = split_dataset(features.rows, config.validation_fraction, config.seed);
  if (split.train_indices.size() < config.batch_size || split.eval_indices.empty()) {
    throw ArgumentError("validation split leaves too few rows for training");
  }
  const detail::Mat all = detail::to_columns(features);
  const detail::Mat val = gather_columns(all, split.eval_indices);

  TrainResult result{FlowModel(features.cols, flow_config), {}};
  FlowModel& model = result.model;
  init_parameters(model, config.seed * 0x9e3779b97f4a7c15ULL + 1);
  TrainLog& log = result.log;

  auto fail = [&](const std::string& what) { throw TrainingError(what, log); };
  try {
    log.initial_val_nll = detail::nll_batch(model, val, nullptr);
  } catch (const NumericError& e) {
    fail(std::string("initial validation NLL: ") + e.what());
  }
  log.best_val_nll = log.initial_val_nll;
  std::vector<double> best_params(model.parameters().begin(), model.parameters().end());

  const std::size_t p = model.parameter_count();
  const auto decay = weight_mask(model);
  std::vector<double> m1(p, 0.0), m2(p, 0.0), grad;
  std::size_t step = 0;
  std::mt19937_64 rng(config.seed + 0x5bd1e995ULL);
  std::vector<std::size_t> order = split.train_indices;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::uniform_int_distribution<std::size_t> pick(0, i - 1);
      std::swap(order[i - 1], order[pick(rng)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      const auto batch = gather_columns(all, std::span(order).subspan(start, n));
      double loss = 0.0;
      try {
        loss = detail::nll_batch(model, batch, &grad);
      } catch (const NumericError& e) {
        fail("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      }
      epoch_loss += loss * static_cast<double>(n);

      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      auto params = model.parameters();
      for (std::size_t k = 0; k < p; ++k) {
        m1[k] = config.beta1 * m1[k] + (1.0 - config.beta1) * grad[k];
        m2[k] = config.beta2 * m2[k] + (1.0 - config.beta2) * grad[k] * grad[k];
        const double update = (m1[k] / c1) / (std::sqrt(m2[k] / c2) + config.epsilon);
        params[k] -= config.learning_rate * update;
        if (decay[k]) params[k] -= config.learning_rate * config.weight_decay * params[k];
      }
    }

    EpochRecord rec{epoch, epoch_loss / static_cast<double>(order.size()), 0.0};
    try {
      rec.val_nll = detail::nll_batch(model, val, nullptr);
    } catch (const NumericError& e) {
      log.epochs.push_back(rec);
      fail("validation NLL diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }
    log.epochs.push_back(rec);
    if (rec.val_nll < log.best_val_nll) {
      log.best_val_nll = rec.val_nll;
      log.best_epoch = epoch;
      best_params.assign(model.parameters().begin(), model.parameters().end());
    } else if (epoch - log.best_epoch >= config.patience) {
      break;
    }
  }

  std::copy(best_params.begin(), best_params.end(), model.parameters().begin());
  const std::size_t probe_rows = std::min<std::size_t>(8, split.train_indices.size());
  log.final_grad_check = finite_diff_check(
      model, features.select_rows(std::span(split.train_indices).first(probe_rows)), 1e-5);
  return result;
}

}  // namespace trajmine

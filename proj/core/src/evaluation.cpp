#include "trajmine/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <json.hpp>

#include "text_io.hpp"
#include "trajmine/errors.hpp"

namespace trajmine {

namespace {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;
using Mat24 = Eigen::Matrix<double, 2, 4>;
using Mat42 = Eigen::Matrix<double, 4, 2>;

void require_pd(const Eigen::Ref<const Eigen::MatrixXd>& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success || !m.allFinite()) {
    throw NumericError(std::string("Kalman ") + what + " lost positive-definiteness");
  }
}

std::vector<std::size_t> top_k_desc(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] > values[b] || (values[a] == values[b] && a < b);
  });
  order.resize(k);
  return order;
}

}  // namespace

void KalmanConfig::validate() const {
  if (!(process_noise_accel_std > 0.0) || !(measurement_noise_std > 0.0)) {
    throw ConfigError("Kalman noise standard deviations must be positive");
  }
  if (initial_velocity_window < 2) throw ConfigError("Kalman initial_velocity_window must be >= 2");
}

std::vector<Position> positions(std::span<const TrajectoryPoint> points) {
  std::vector<Position> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back({p.lateral_pos, p.longitudinal_pos});
  return out;
}

std::vector<Position> kalman_cv_predict(std::span<const Position> history, std::size_t horizon,
                                        const KalmanConfig& config) {
  config.validate();
  const std::size_t w = config.initial_velocity_window;
  if (history.size() < w) {
    throw ArgumentError("Kalman history has " + std::to_string(history.size()) + " frames, needs at least " +
                        std::to_string(w));
  }
  const double dt = kFramePeriod;
  const double q2 = config.process_noise_accel_std * config.process_noise_accel_std;
  const double r2 = config.measurement_noise_std * config.measurement_noise_std;

  Mat4 F = Mat4::Identity();
  F(0, 2) = dt;
  F(1, 3) = dt;
  Mat4 Q = Mat4::Zero();
  for (int axis = 0; axis < 2; ++axis) {
    Q(axis, axis) = q2 * std::pow(dt, 4) / 4.0;
    Q(axis, axis + 2) = Q(axis + 2, axis) = q2 * std::pow(dt, 3) / 2.0;
    Q(axis + 2, axis + 2) = q2 * dt * dt;
  }
  Mat24 H = Mat24::Zero();
  H(0, 0) = 1.0;
  H(1, 1) = 1.0;
  const Eigen::Matrix2d R = Eigen::Matrix2d::Identity() * r2;

  const auto& first = history[0];
  const auto& last_init = history[w - 1];
  const double span = static_cast<double>(w - 1) * dt;
  Vec4 s(last_init.x, last_init.y, (last_init.x - first.x) / span, (last_init.y - first.y) / span);
  Mat4 P = Mat4::Zero();
  P(0, 0) = P(1, 1) = r2;
  P(2, 2) = P(3, 3) = 2.0 * r2 / (span * span);

  for (std::size_t i = w; i < history.size(); ++i) {
    s = F * s;
    P = F * P * F.transpose() + Q;
    const Eigen::Vector2d z(history[i].x, history[i].y);
    const Eigen::Matrix2d S = H * P * H.transpose() + R;
    require_pd(S, "innovation covariance");
    const Mat42 K = P * H.transpose() * S.inverse();
    s += K * (z - H * s);
    const Mat4 IKH = Mat4::Identity() - K * H;
    P = IKH * P * IKH.transpose() + K * R * K.transpose();
    P = 0.5 * (P + P.transpose());
    require_pd(P, "state covariance");
  }

  std::vector<Position> out;
  out.reserve(horizon);
  for (std::size_t k = 0; k < horizon; ++k) {
    s = F * s;
    if (!s.allFinite()) throw NumericError("Kalman rollout produced a non-finite state");
    out.push_back({s(0), s(1)});
  }
  return out;
}

std::vector<Position> kalman_cv_predict(const Example& example, const KalmanConfig& config) {
  if (example.history_frames.size() != kHistoryFrames) {
    throw ArgumentError("example history must have " + std::to_string(kHistoryFrames) + " frames");
  }
  const auto hist = positions(example.history_frames);
  return kalman_cv_predict(hist, kFutureFrames, config);
}

double terminal_error(std::span<const Position> predicted, std::span<const Position> truth) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw ArgumentError("prediction and ground truth lengths differ (" + std::to_string(predicted.size()) + " vs " +
                        std::to_string(truth.size()) + ")");
  }
  const auto& p = predicted.back();
  const auto& t = truth.back();
  return std::hypot(p.x - t.x, p.y - t.y);
}

double rmse5(std::span<const Position> predicted, std::span<const Position> truth) {
  return terminal_error(predicted, truth);
}

double horizon_rmse(std::span<const Position> predicted, std::span<const Position> truth) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw ArgumentError("prediction and ground truth lengths differ (" + std::to_string(predicted.size()) + " vs " +
                        std::to_string(truth.size()) + ")");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double dx = predicted[i].x - truth[i].x;
    const double dy = predicted[i].y - truth[i].y;
    acc += dx * dx + dy * dy;
  }
  return std::sqrt(acc / static_cast<double>(predicted.size()));
}

double subset_rmse(std::span<const double> per_example_error, std::span<const std::size_t> subset) {
  if (subset.empty()) throw MetricError("RMSE of an empty subset is undefined");
  double acc = 0.0;
  for (const auto i : subset) {
    if (i >= per_example_error.size()) throw ArgumentError("subset index " + std::to_string(i) + " out of range");
    acc += per_example_error[i] * per_example_error[i];
  }
  return std::sqrt(acc / static_cast<double>(subset.size()));
}

double dataset_rmse(std::span<const double> per_example_error) {
  std::vector<std::size_t> all(per_example_error.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return subset_rmse(per_example_error, all);
}

std::vector<double> per_example_errors(std::span<const Example> examples, const KalmanConfig& config,
                                       const ErrorOptions& options) {
  std::vector<double> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto pred = kalman_cv_predict(ex, config);
    const auto truth = positions(ex.future_frames);
    out.push_back(options.horizon_averaged ? horizon_rmse(pred, truth) : terminal_error(pred, truth));
  }
  return out;
}

std::vector<std::size_t> reference_labels(std::span<const double> per_example_error, double r) {
  if (!(r > 0.0 && r <= 1.0)) throw ArgumentError("reference ratio r must lie in (0, 1]");
  return top_k_desc(per_example_error, mined_count(per_example_error.size(), r));
}

std::vector<std::size_t> reference_labels(std::span<const Example> examples, double r, const KalmanConfig& config) {
  return reference_labels(per_example_errors(examples, config), r);
}

double delta_err(double err_subset, double err_full) {
  if (!(err_full > 0.0)) throw MetricError("delta_err undefined: whole-dataset error is zero");
  return (err_subset - err_full) / err_full;
}

double coverage(std::span<const std::size_t> mined, std::span<const std::size_t> target) {
  if (target.empty()) throw MetricError("coverage undefined: target set is empty");
  std::vector<std::size_t> a(mined.begin(), mined.end());
  std::vector<std::size_t> b(target.begin(), target.end());
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  std::vector<std::size_t> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  return static_cast<double>(both.size()) / static_cast<double>(b.size());
}

std::vector<std::size_t> random_baseline(std::size_t n, double r, std::uint64_t seed) {
  if (!(r > 0.0 && r <= 1.0)) throw ArgumentError("random baseline ratio r must lie in (0, 1]");
  const std::size_t k = mined_count(n, r);
  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

const SubsetMetrics& EvalReport::subset(const std::string& name) const {
  for (const auto& s : subsets) {
    if (s.name == name) return s;
  }
  throw ArgumentError("report has no subset named " + name);
}

EvalReport build_report(const ScoreTable& scores, const MinedSubsets& subsets, std::span<const double> per_example_error,
                        double r, const ReportOptions& options) {
  const std::size_t n = per_example_error.size();
  if (scores.size() != n) {
    throw ArgumentError("score table and error column are not aligned (" + std::to_string(scores.size()) + " vs " +
                        std::to_string(n) + ")");
  }
  EvalReport rep;
  rep.r = r;
  rep.lambda = subsets.lambda;
  rep.random_seed = options.random_seed;
  rep.n = n;
  rep.horizon_averaged = options.horizon_averaged;
  rep.per_example_error.assign(per_example_error.begin(), per_example_error.end());
  rep.err_full = dataset_rmse(per_example_error);

  const auto reference = reference_labels(per_example_error, r);
  std::optional<std::vector<std::size_t>> model_top;
  if (options.external_errors) {
    if (options.external_errors->size() != n) throw ArgumentError("external error column is not aligned");
    model_top = reference_labels(*options.external_errors, r);
  }
  if (options.rare_flags && options.rare_flags->size() != n) throw ArgumentError("rare flag column is not aligned");

  auto metrics = [&](const std::string& name, std::span<const std::size_t> idx) {
    SubsetMetrics m;
    m.name = name;
    m.size = idx.size();
    m.err = subset_rmse(per_example_error, idx);
    m.delta_err = delta_err(m.err, rep.err_full);
    m.cov_ref = coverage(idx, reference);
    if (model_top) m.cov_model = coverage(idx, *model_top);
    if (options.rare_flags && !idx.empty()) {
      std::size_t hits = 0;
      for (const auto i : idx) hits += (*options.rare_flags)[i] ? 1 : 0;
      m.rare_fraction = static_cast<double>(hits) / static_cast<double>(idx.size());
    }
    return m;
  };
  rep.subsets.push_back(metrics("D_X", subsets.d_x.indices));
  rep.subsets.push_back(metrics("D_Z", subsets.d_z.indices));
  rep.subsets.push_back(metrics("D_YX", subsets.d_yx.indices));
  rep.subsets.push_back(metrics("random", random_baseline(n, r, options.random_seed)));
  rep.subsets.push_back(metrics("reference", reference));

  rep.random_mean.seeds = options.random_seeds;
  for (std::size_t s = 0; s < options.random_seeds; ++s) {
    const auto m = metrics("random", random_baseline(n, r, options.random_seed + s));
    rep.random_mean.mean_err += m.err;
    rep.random_mean.mean_delta_err += m.delta_err;
    rep.random_mean.mean_abs_delta_err += std::abs(m.delta_err);
    rep.random_mean.mean_cov_ref += m.cov_ref;
    if (m.rare_fraction) rep.random_mean.mean_rare_fraction = rep.random_mean.mean_rare_fraction.value_or(0.0) + *m.rare_fraction;
  }
  if (options.random_seeds > 0) {
    const double k = static_cast<double>(options.random_seeds);
    rep.random_mean.mean_err /= k;
    rep.random_mean.mean_delta_err /= k;
    rep.random_mean.mean_abs_delta_err /= k;
    rep.random_mean.mean_cov_ref /= k;
    if (rep.random_mean.mean_rare_fraction) *rep.random_mean.mean_rare_fraction /= k;
  }
  return rep;
}

std::string report_json(const EvalReport& report, const std::string& config_hash) {
  nlohmann::ordered_json subsets = nlohmann::ordered_json::array();
  for (const auto& s : report.subsets) {
    nlohmann::ordered_json j{{"name", s.name},
                             {"size", s.size},
                             {"err", s.err},
                             {"delta_err", s.delta_err},
                             {"cov_ref", s.cov_ref}};
    if (s.cov_model) j["cov_model"] = *s.cov_model;
    if (s.rare_fraction) j["rare_fraction"] = *s.rare_fraction;
    subsets.push_back(std::move(j));
  }
  nlohmann::ordered_json doc{{"config_hash", config_hash},
                             {"r", report.r},
                             {"lambda", report.lambda},
                             {"n", report.n},
                             {"metric", report.horizon_averaged ? "horizon_rmse" : "terminal_rmse"},
                             {"random_seed", report.random_seed},
                             {"err_full", report.err_full},
                             {"subsets", subsets},
                             {"random_mean",
                              {{"seeds", report.random_mean.seeds},
                               {"err", report.random_mean.mean_err},
                               {"delta_err", report.random_mean.mean_delta_err},
                               {"abs_delta_err", report.random_mean.mean_abs_delta_err},
                               {"cov_ref", report.random_mean.mean_cov_ref}}}};
  if (report.random_mean.mean_rare_fraction) {
    doc["random_mean"]["rare_fraction"] = *report.random_mean.mean_rare_fraction;
  }
  return doc.dump(1) + "\n";
}

std::string per_example_csv(const EvalReport& report, const ScoreTable& scores, const std::string& config_hash) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << '\n';
  out << "example_index,error_m,C_x,C_z,C_yx\n";
  for (std::size_t i = 0; i < report.per_example_error.size(); ++i) {
    out << i << ',' << detail::format_double(report.per_example_error[i]) << ','
        << detail::format_double(scores.c_x[i]) << ',' << detail::format_double(scores.c_z[i]) << ','
        << detail::format_double(scores.c_yx[i]) << '\n';
  }
  return out.str();
}

std::vector<HistogramBin> score_histogram(const ScoreTable& scores, std::size_t bins) {
  if (bins == 0) throw ArgumentError("histogram needs at least one bin");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto* col : {&scores.c_x, &scores.c_z, &scores.c_yx}) {
    for (const double v : *col) {
      if (!std::isfinite(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(lo <= hi)) return {};
  if (hi == lo) hi = lo + 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<HistogramBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out[b].lower = lo + width * static_cast<double>(b);
    out[b].upper = b + 1 == bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  auto slot = [&](double v) {
    auto b = static_cast<std::size_t>((v - lo) / width);
    return std::min(b, bins - 1);
  };
  for (const double v : scores.c_x) if (std::isfinite(v)) ++out[slot(v)].count_x;
  for (const double v : scores.c_z) if (std::isfinite(v)) ++out[slot(v)].count_z;
  for (const double v : scores.c_yx) if (std::isfinite(v)) ++out[slot(v)].count_yx;
  return out;
}

std::string histogram_csv(std::span<const HistogramBin> bins, const std::string& config_hash) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << '\n';
  out << "bin_lower,bin_upper,count_C_x,count_C_z,count_C_yx\n";
  for (const auto& b : bins) {
    out << detail::format_double(b.lower) << ',' << detail::format_double(b.upper) << ',' << b.count_x << ','
        << b.count_z << ',' << b.count_yx << '\n';
  }
  return out.str();
}

std::vector<double> parse_external_errors(const std::string& text, std::size_t n) {
  std::vector<double> out(n, std::numeric_limits<double>::quiet_NaN());
  std::vector<std::uint8_t> seen(n, 0);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "example_index,error_m") {
        throw SchemaError("external error file line " + std::to_string(line_no) +
                          ": expected header 'example_index,error_m'");
      }
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError("external error file line " + std::to_string(line_no) + ": missing comma");
    std::size_t idx = 0;
    double err = 0.0;
    try {
      idx = std::stoull(line.substr(0, comma));
      err = std::stod(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw DataError("external error file line " + std::to_string(line_no) + ": unparsable value");
    }
    if (idx >= n) throw DataError("external error file line " + std::to_string(line_no) + ": index out of range");
    if (seen[idx]) throw DataError("external error file line " + std::to_string(line_no) + ": duplicate index");
    if (!std::isfinite(err) || err < 0.0) {
      throw DataError("external error file line " + std::to_string(line_no) + ": error must be finite and >= 0");
    }
    seen[idx] = 1;
    out[idx] = err;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i]) throw DataError("external error file has no entry for example " + std::to_string(i));
  }
  return out;
}

}  // namespace trajmine

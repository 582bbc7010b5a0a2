#include "trajmine/flow.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <json.hpp>

#include "flow_engine.hpp"
#include "text_io.hpp"
#include "trajmine/errors.hpp"

namespace trajmine {

namespace {

constexpr std::string_view kModelMagic = "TRAJMINE-FLOW-1";
constexpr std::size_t kScoreChunk = 256;
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

Parity parity_of(std::size_t layer) { return layer % 2 == 0 ? Parity::even : Parity::odd; }

template <typename T>
CouplingView<T> make_view(std::span<T> params, std::size_t offset, std::size_t dim, std::size_t hidden,
                          Parity parity) {
  CouplingView<T> v;
  v.parity = parity;
  v.split = coupling_split(dim, parity);
  v.hidden = hidden;
  const std::size_t f = v.split.fixed_size;
  const std::size_t m = v.split.moved_size;
  const std::size_t h = hidden;
  std::size_t o = offset;
  auto take = [&](std::size_t n) {
    auto s = params.subspan(o, n);
    o += n;
    return s;
  };
  v.w1 = take(h * f);
  v.b1 = take(h);
  v.w2 = take(h * h);
  v.b2 = take(h);
  v.w3 = take(m * h);
  v.b3 = take(m);
  return v;
}

void check_dim(const FlowModel& model, std::size_t n) {
  if (n != model.dim()) {
    throw ArgumentError("dimension mismatch: model has " + std::to_string(model.dim()) + ", input has " +
                        std::to_string(n));
  }
}

void check_finite(const detail::Mat& m, const char* what) {
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (!m.col(c).allFinite()) {
      throw NumericError(std::string("non-finite ") + what + " at batch index " + std::to_string(c));
    }
  }
}

}  // namespace

CouplingSplit coupling_split(std::size_t dim, Parity parity) {
  const std::size_t first = (dim + 1) / 2;
  const std::size_t second = dim - first;
  if (parity == Parity::even) return {0, first, first, second};
  return {first, second, 0, first};
}

FlowModel::FlowModel(std::size_t dim, FlowConfig config) : dim_(dim), config_(config) {
  if (dim == 0) throw ArgumentError("flow dimension must be >= 1");
  if (config.coupling_layers > 0 && (config.hidden == 0 || dim < 2)) {
    throw ArgumentError("coupling layers need hidden >= 1 and dimension >= 2");
  }
  params_.assign(layer_offset(config.coupling_layers) + dim, 0.0);
}

std::size_t FlowModel::layer_size(std::size_t layer) const {
  const auto s = coupling_split(dim_, parity_of(layer));
  const std::size_t h = config_.hidden;
  return h * s.fixed_size + h + h * h + h + s.moved_size * h + s.moved_size;
}

std::size_t FlowModel::layer_offset(std::size_t layer) const {
  std::size_t o = 0;
  for (std::size_t l = 0; l < layer; ++l) o += layer_size(l);
  return o;
}

CouplingParams FlowModel::coupling(std::size_t layer) {
  return make_view<double>(params_, layer_offset(layer), dim_, config_.hidden, parity_of(layer));
}

ConstCouplingParams FlowModel::coupling(std::size_t layer) const {
  return make_view<const double>(params_, layer_offset(layer), dim_, config_.hidden, parity_of(layer));
}

std::span<double> FlowModel::log_scale() { return std::span(params_).subspan(params_.size() - dim_); }

std::span<const double> FlowModel::log_scale() const {
  return std::span(params_).subspan(params_.size() - dim_);
}

std::string FlowModel::parameter_path(std::size_t index) const {
  std::size_t o = 0;
  for (std::size_t l = 0; l < config_.coupling_layers; ++l) {
    const std::size_t size = layer_size(l);
    if (index < o + size) {
      const auto s = coupling_split(dim_, parity_of(l));
      const std::size_t h = config_.hidden;
      std::size_t local = index - o;
      const std::string prefix = "coupling[" + std::to_string(l) + "].";
      auto matrix = [&](const char* name, std::size_t rows) {
        return prefix + name + "[" + std::to_string(local % rows) + "," + std::to_string(local / rows) + "]";
      };
      auto vec = [&](const char* name) { return prefix + name + "[" + std::to_string(local) + "]"; };
      if (local < h * s.fixed_size) return matrix("w1", h);
      local -= h * s.fixed_size;
      if (local < h) return vec("b1");
      local -= h;
      if (local < h * h) return matrix("w2", h);
      local -= h * h;
      if (local < h) return vec("b2");
      local -= h;
      if (local < s.moved_size * h) return matrix("w3", s.moved_size);
      local -= s.moved_size * h;
      return vec("b3");
    }
    o += size;
  }
  return "log_scale[" + std::to_string(index - o) + "]";
}

bool FlowModel::operator==(const FlowModel& other) const {
  return dim_ == other.dim_ && config_ == other.config_ && params_ == other.params_ &&
         standardizer_.mean == other.standardizer_.mean && standardizer_.std == other.standardizer_.std;
}

void init_parameters(FlowModel& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l < model.num_couplings(); ++l) {
    auto c = model.coupling(l);
    auto fill = [&](std::span<double> w, std::size_t fan_in) {
      std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
      for (auto& x : w) x = dist(rng);
    };
    fill(c.w1, c.split.fixed_size);
    fill(c.w2, c.hidden);
    fill(c.w3, c.hidden);
    std::fill(c.b1.begin(), c.b1.end(), 0.0);
    std::fill(c.b2.begin(), c.b2.end(), 0.0);
    std::fill(c.b3.begin(), c.b3.end(), 0.0);
  }
  auto s = model.log_scale();
  std::fill(s.begin(), s.end(), 0.0);
}

namespace detail {

Mat to_columns(const Matrix& rows) {
  return ConstMatMap(rows.values.data(), static_cast<Eigen::Index>(rows.cols),
                     static_cast<Eigen::Index>(rows.rows));
}

Mat coupling_shift(const ConstCouplingParams& c, const Mat& fixed, Mat* h1_out, Mat* h2_out) {
  const auto h = static_cast<Eigen::Index>(c.hidden);
  const auto f = static_cast<Eigen::Index>(c.split.fixed_size);
  const auto m = static_cast<Eigen::Index>(c.split.moved_size);
  const ConstMatMap w1(c.w1.data(), h, f), w2(c.w2.data(), h, h), w3(c.w3.data(), m, h);
  const ConstVecMap b1(c.b1.data(), h), b2(c.b2.data(), h), b3(c.b3.data(), m);
  Mat h1 = ((w1 * fixed).colwise() + b1).array().tanh().matrix();
  Mat h2 = ((w2 * h1).colwise() + b2).array().tanh().matrix();
  Mat out = (w3 * h2).colwise() + b3;
  if (h1_out) *h1_out = std::move(h1);
  if (h2_out) *h2_out = std::move(h2);
  return out;
}

double forward_batch(const FlowModel& model, Mat& x, ForwardCache* cache) {
  if (cache) {
    cache->fixed.resize(model.num_couplings());
    cache->h1.resize(model.num_couplings());
    cache->h2.resize(model.num_couplings());
  }
  for (std::size_t l = 0; l < model.num_couplings(); ++l) {
    const auto c = model.coupling(l);
    const auto fb = static_cast<Eigen::Index>(c.split.fixed_begin);
    const auto fs = static_cast<Eigen::Index>(c.split.fixed_size);
    const auto mb = static_cast<Eigen::Index>(c.split.moved_begin);
    const auto ms = static_cast<Eigen::Index>(c.split.moved_size);
    Mat fixed = x.middleRows(fb, fs);
    Mat shift = cache ? coupling_shift(c, fixed, &cache->h1[l], &cache->h2[l]) : coupling_shift(c, fixed);
    x.middleRows(mb, ms) += shift;
    if (cache) cache->fixed[l] = std::move(fixed);
  }
  const ConstVecMap s(model.log_scale().data(), static_cast<Eigen::Index>(model.dim()));
  x.array().colwise() *= s.array().exp();
  double log_det = 0.0;
  for (const double v : model.log_scale()) log_det += v;
  return log_det;
}

void inverse_batch(const FlowModel& model, Mat& b) {
  const ConstVecMap s(model.log_scale().data(), static_cast<Eigen::Index>(model.dim()));
  b.array().colwise() *= (-s.array()).exp();
  for (std::size_t l = model.num_couplings(); l-- > 0;) {
    const auto c = model.coupling(l);
    const Mat fixed = b.middleRows(static_cast<Eigen::Index>(c.split.fixed_begin),
                                   static_cast<Eigen::Index>(c.split.fixed_size));
    b.middleRows(static_cast<Eigen::Index>(c.split.moved_begin), static_cast<Eigen::Index>(c.split.moved_size)) -=
        coupling_shift(c, fixed);
  }
}

Eigen::VectorXd log_prob_batch(const FlowModel& model, const Mat& x) {
  if (static_cast<std::size_t>(x.rows()) != model.dim()) check_dim(model, static_cast<std::size_t>(x.rows()));
  Mat b = x;
  const double log_det = forward_batch(model, b);
  check_finite(b, "latent");
  const double base = -static_cast<double>(model.dim()) * kHalfLog2Pi;
  Eigen::VectorXd out(b.cols());
  for (Eigen::Index c = 0; c < b.cols(); ++c) out[c] = base - 0.5 * b.col(c).squaredNorm() + log_det;
  return out;
}

double nll_batch(const FlowModel& model, const Mat& x, std::vector<double>* grad) {
  check_dim(model, static_cast<std::size_t>(x.rows()));
  if (x.cols() == 0) throw ArgumentError("nll of an empty batch");
  const auto batch = static_cast<double>(x.cols());
  Mat b = x;
  ForwardCache cache;
  const double log_det = forward_batch(model, b, grad ? &cache : nullptr);

  const double base = static_cast<double>(model.dim()) * kHalfLog2Pi;
  double total = 0.0;
  for (Eigen::Index c = 0; c < b.cols(); ++c) {
    const double loss = base + 0.5 * b.col(c).squaredNorm() - log_det;
    if (!std::isfinite(loss)) {
      throw NumericError("non-finite negative log-likelihood at batch index " + std::to_string(c));
    }
    total += loss;
  }
  const double nll = total / batch;
  if (!grad) return nll;

  grad->assign(model.parameter_count(), 0.0);
  const auto d = static_cast<Eigen::Index>(model.dim());
  const ConstVecMap s(model.log_scale().data(), d);

  // d(nll)/d(s_i) = mean_c b_ic^2 - 1
  Eigen::VectorXd gs = b.array().square().rowwise().sum().matrix() / batch;
  gs.array() -= 1.0;
  std::copy(gs.data(), gs.data() + d, grad->end() - d);

  // Gradient w.r.t. the pre-scaling activations.
  Mat g = b / batch;
  g.array().colwise() *= s.array().exp();

  auto& params_grad = *grad;
  std::size_t offset = 0;
  std::vector<std::size_t> offsets(model.num_couplings());
  for (std::size_t l = 0; l < model.num_couplings(); ++l) {
    offsets[l] = offset;
    const auto c = model.coupling(l);
    offset += c.w1.size() + c.b1.size() + c.w2.size() + c.b2.size() + c.w3.size() + c.b3.size();
  }

  for (std::size_t l = model.num_couplings(); l-- > 0;) {
    const auto c = model.coupling(l);
    const auto h = static_cast<Eigen::Index>(c.hidden);
    const auto f = static_cast<Eigen::Index>(c.split.fixed_size);
    const auto m = static_cast<Eigen::Index>(c.split.moved_size);
    const ConstMatMap w1(c.w1.data(), h, f), w2(c.w2.data(), h, h), w3(c.w3.data(), m, h);
    const Mat& fixed = cache.fixed[l];
    const Mat& h1 = cache.h1[l];
    const Mat& h2 = cache.h2[l];

    const Mat g_out = g.middleRows(static_cast<Eigen::Index>(c.split.moved_begin), m);
    const Mat g_h2 = ((w3.transpose() * g_out).array() * (1.0 - h2.array().square())).matrix();
    const Mat g_h1 = ((w2.transpose() * g_h2).array() * (1.0 - h1.array().square())).matrix();

    double* base_ptr = params_grad.data() + offsets[l];
    MatMap(base_ptr, h, f) = g_h1 * fixed.transpose();
    base_ptr += h * f;
    Eigen::Map<Eigen::VectorXd>(base_ptr, h) = g_h1.rowwise().sum();
    base_ptr += h;
    MatMap(base_ptr, h, h) = g_h2 * h1.transpose();
    base_ptr += h * h;
    Eigen::Map<Eigen::VectorXd>(base_ptr, h) = g_h2.rowwise().sum();
    base_ptr += h;
    MatMap(base_ptr, m, h) = g_out * h2.transpose();
    base_ptr += m * h;
    Eigen::Map<Eigen::VectorXd>(base_ptr, m) = g_out.rowwise().sum();

    g.middleRows(static_cast<Eigen::Index>(c.split.fixed_begin), f) += w1.transpose() * g_h1;
  }
  return nll;
}

}  // namespace detail

std::vector<double> coupling_forward(const FlowModel& model, std::size_t layer, std::span<const double> v) {
  check_dim(model, v.size());
  if (layer >= model.num_couplings()) throw ArgumentError("coupling layer index out of range");
  const auto c = model.coupling(layer);
  std::vector<double> out(v.begin(), v.end());
  const detail::Mat fixed = detail::ConstMatMap(v.data() + c.split.fixed_begin,
                                                static_cast<Eigen::Index>(c.split.fixed_size), 1);
  const detail::Mat shift = detail::coupling_shift(c, fixed);
  for (std::size_t i = 0; i < c.split.moved_size; ++i) out[c.split.moved_begin + i] += shift(static_cast<Eigen::Index>(i), 0);
  return out;
}

std::vector<double> coupling_inverse(const FlowModel& model, std::size_t layer, std::span<const double> u) {
  check_dim(model, u.size());
  if (layer >= model.num_couplings()) throw ArgumentError("coupling layer index out of range");
  const auto c = model.coupling(layer);
  std::vector<double> out(u.begin(), u.end());
  const detail::Mat fixed = detail::ConstMatMap(u.data() + c.split.fixed_begin,
                                                static_cast<Eigen::Index>(c.split.fixed_size), 1);
  const detail::Mat shift = detail::coupling_shift(c, fixed);
  for (std::size_t i = 0; i < c.split.moved_size; ++i) out[c.split.moved_begin + i] -= shift(static_cast<Eigen::Index>(i), 0);
  return out;
}

FlowForward flow_forward(const FlowModel& model, std::span<const double> v) {
  check_dim(model, v.size());
  detail::Mat x = detail::ConstMatMap(v.data(), static_cast<Eigen::Index>(v.size()), 1);
  FlowForward out;
  out.log_det = detail::forward_batch(model, x);
  check_finite(x, "latent");
  out.latent.assign(x.data(), x.data() + x.size());
  return out;
}

std::vector<double> flow_inverse(const FlowModel& model, std::span<const double> b) {
  check_dim(model, b.size());
  detail::Mat x = detail::ConstMatMap(b.data(), static_cast<Eigen::Index>(b.size()), 1);
  detail::inverse_batch(model, x);
  check_finite(x, "reconstruction");
  return {x.data(), x.data() + x.size()};
}

double log_prob(const FlowModel& model, std::span<const double> v) {
  check_dim(model, v.size());
  const detail::Mat x = detail::ConstMatMap(v.data(), static_cast<Eigen::Index>(v.size()), 1);
  return detail::log_prob_batch(model, x)[0];
}

std::vector<double> log_prob_rows(const FlowModel& model, const Matrix& rows) {
  check_dim(model, rows.cols);
  std::vector<double> out;
  out.reserve(rows.rows);
  for (std::size_t start = 0; start < rows.rows; start += kScoreChunk) {
    const std::size_t n = std::min(kScoreChunk, rows.rows - start);
    const detail::Mat x = detail::ConstMatMap(rows.values.data() + start * rows.cols,
                                              static_cast<Eigen::Index>(rows.cols), static_cast<Eigen::Index>(n));
    const auto lp = detail::log_prob_batch(model, x);
    out.insert(out.end(), lp.data(), lp.data() + lp.size());
  }
  return out;
}

Matrix sample(const FlowModel& model, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ArgumentError("sample count must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(n, model.dim());
  for (auto& v : out.values) v = normal(rng);
  detail::MatMap x(out.values.data(), static_cast<Eigen::Index>(model.dim()), static_cast<Eigen::Index>(n));
  detail::Mat b = x;
  detail::inverse_batch(model, b);
  x = b;
  return out;
}

std::string serialize_model(const FlowModel& model, const std::string& config_hash) {
  auto parities = nlohmann::json::array();
  for (std::size_t l = 0; l < model.num_couplings(); ++l) parities.push_back(l % 2 == 0 ? "even" : "odd");
  nlohmann::json header{{"format", std::string(kModelMagic)},
                        {"dim", model.dim()},
                        {"coupling_layers", model.config().coupling_layers},
                        {"hidden", model.config().hidden},
                        {"parity_order", parities},
                        {"activation", "tanh"},
                        {"base", "standard_normal"},
                        {"parameter_count", model.parameter_count()},
                        {"standardizer",
                         {{"mean", model.standardizer().mean}, {"std", model.standardizer().std}}},
                        {"config_hash", config_hash}};
  std::string blob;
  detail::append_f64_le(blob, model.parameters());
  return detail::pack_container(kModelMagic, header.dump(), blob);
}

ModelFile deserialize_model(const std::string& bytes) {
  const auto c = detail::unpack_container(kModelMagic, bytes);
  try {
    const auto header = nlohmann::json::parse(c.header_json);
    FlowConfig cfg{header.at("coupling_layers").get<std::size_t>(), header.at("hidden").get<std::size_t>()};
    ModelFile file{FlowModel(header.at("dim").get<std::size_t>(), cfg), header.at("config_hash").get<std::string>()};
    const auto count = header.at("parameter_count").get<std::size_t>();
    if (count != file.model.parameter_count() || c.blob.size() != count * 8) {
      throw DataError("model parameter blob does not match its header");
    }
    const auto params = detail::read_f64_le(c.blob, count);
    std::copy(params.begin(), params.end(), file.model.parameters().begin());
    Standardizer s;
    s.mean = header.at("standardizer").at("mean").get<std::vector<double>>();
    s.std = header.at("standardizer").at("std").get<std::vector<double>>();
    file.model.set_standardizer(std::move(s));
    return file;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model header: ") + e.what());
  }
}

}  // namespace trajmine

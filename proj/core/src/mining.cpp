#include "trajmine/mining.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "text_io.hpp"
#include "trajmine/errors.hpp"

namespace trajmine {

namespace {

bool ranked_before(std::span<const double> s, std::size_t a, std::size_t b) {
  return s[a] < s[b] || (s[a] == s[b] && a < b);
}

double parse_number(const std::string& field, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw DataError("score table line " + std::to_string(line) + ": bad number '" + field + "'");
  }
}

}  // namespace

ScoreTable score_examples(const FlowModel& model_x, const FlowModel& model_z, const Matrix& features_x,
                          const Matrix& features_z, double lambda) {
  if (features_x.rows != features_z.rows) {
    throw ConfigError("X and Z feature sets are not index-aligned (" + std::to_string(features_x.rows) + " vs " +
                      std::to_string(features_z.rows) + " rows)");
  }
  if (features_x.cols != model_x.dim() || features_z.cols != model_z.dim()) {
    throw ConfigError("feature dimension does not match the trained model (X " + std::to_string(features_x.cols) +
                      "/" + std::to_string(model_x.dim()) + ", Z " + std::to_string(features_z.cols) + "/" +
                      std::to_string(model_z.dim()) + ")");
  }
  ScoreTable t;
  t.c_x = log_prob_rows(model_x, features_x);
  t.c_z = log_prob_rows(model_z, features_z);
  return with_lambda(t, lambda);
}

ScoreTable score_feature_sets(const FlowModel& model_x, const FlowModel& model_z, const FeatureSet& features_x,
                              const FeatureSet& features_z, double lambda) {
  auto prepare = [](const FlowModel& model, const FeatureSet& set, const char* name) {
    const auto& st = model.standardizer();
    if (st.empty()) return set.values;
    if (st.dim() != set.values.cols) {
      throw ConfigError(std::string(name) + " standardizer has dimension " + std::to_string(st.dim()) +
                        " but features have " + std::to_string(set.values.cols));
    }
    return st.apply(set.values, set.observed);
  };
  return score_examples(model_x, model_z, prepare(model_x, features_x, "X"), prepare(model_z, features_z, "Z"),
                        lambda);
}

ScoreTable with_lambda(const ScoreTable& scores, double lambda) {
  ScoreTable t = scores;
  t.lambda = lambda;
  t.c_yx.resize(t.c_x.size());
  for (std::size_t i = 0; i < t.c_x.size(); ++i) t.c_yx[i] = t.c_z[i] - lambda * t.c_x[i];
  return t;
}

std::size_t mined_count(std::size_t n, double r) {
  // A small tolerance keeps products like 0.15 * 2000 = 299.99999999999997 at 300.
  return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9));
}

MinedSet mine(std::span<const double> scores, double r) {
  if (!(r > 0.0 && r <= 1.0)) throw ArgumentError("mining ratio r must lie in (0, 1]");
  if (scores.empty()) throw ArgumentError("cannot mine an empty score column");
  const std::size_t n = scores.size();
  const std::size_t k = mined_count(n, r);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ranked_before(scores, a, b); });
  MinedSet out;
  out.indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  out.threshold = k < n ? scores[order[k]] : std::numeric_limits<double>::infinity();
  return out;
}

MinedSubsets mine_all(const ScoreTable& scores, double r) {
  MinedSubsets s;
  s.r = r;
  s.lambda = scores.lambda;
  s.d_x = mine(scores.c_x, r);
  s.d_z = mine(scores.c_z, r);
  s.d_yx = mine(scores.c_yx, r);
  return s;
}

std::string score_table_csv(const ScoreTable& scores, const MinedSubsets* subsets, const std::string& config_hash) {
  std::ostringstream out;
  out << "# config_hash=" << config_hash << " lambda=" << detail::format_double(scores.lambda) << '\n';
  out << "example_index,C_x,C_z,C_yx";
  std::vector<std::uint8_t> in_x, in_z, in_yx;
  if (subsets) {
    out << ",in_dx,in_dz,in_dyx";
    auto flags = [&](const MinedSet& s) {
      std::vector<std::uint8_t> f(scores.size(), 0);
      for (const auto i : s.indices) f[i] = 1;
      return f;
    };
    in_x = flags(subsets->d_x);
    in_z = flags(subsets->d_z);
    in_yx = flags(subsets->d_yx);
  }
  out << '\n';
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out << i << ',' << detail::format_double(scores.c_x[i]) << ',' << detail::format_double(scores.c_z[i]) << ','
        << detail::format_double(scores.c_yx[i]);
    if (subsets) out << ',' << int(in_x[i]) << ',' << int(in_z[i]) << ',' << int(in_yx[i]);
    out << '\n';
  }
  return out.str();
}

ScoreFile parse_score_table_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  ScoreFile file;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream meta(line.substr(1));
      std::string token;
      while (meta >> token) {
        if (token.rfind("config_hash=", 0) == 0) file.config_hash = token.substr(12);
        if (token.rfind("lambda=", 0) == 0) file.scores.lambda = parse_number(token.substr(7), line_no);
      }
      continue;
    }
    if (!header_seen) {
      if (line.rfind("example_index,C_x,C_z,C_yx", 0) != 0) {
        throw SchemaError("score table line " + std::to_string(line_no) + ": unexpected header");
      }
      header_seen = true;
      continue;
    }
    std::vector<std::string> fields;
    std::istringstream row(line);
    std::string field;
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() < 4) throw DataError("score table line " + std::to_string(line_no) + ": too few columns");
    const auto idx = static_cast<std::size_t>(parse_number(fields[0], line_no));
    if (idx != file.scores.c_x.size()) {
      throw DataError("score table line " + std::to_string(line_no) + ": example_index out of sequence");
    }
    file.scores.c_x.push_back(parse_number(fields[1], line_no));
    file.scores.c_z.push_back(parse_number(fields[2], line_no));
    file.scores.c_yx.push_back(parse_number(fields[3], line_no));
  }
  return file;
}

std::string mined_summary_json(const MinedSubsets& subsets, std::size_t n, const std::string& config_hash) {
  auto threshold = [](double v) -> nlohmann::json {
    if (std::isinf(v)) return nullptr;
    return v;
  };
  nlohmann::json doc{{"config_hash", config_hash},
                     {"r", subsets.r},
                     {"lambda", subsets.lambda},
                     {"n", n},
                     {"k", subsets.d_yx.indices.size()},
                     {"delta_x", threshold(subsets.d_x.threshold)},
                     {"delta_z", threshold(subsets.d_z.threshold)},
                     {"delta_y", threshold(subsets.d_yx.threshold)},
                     {"d_x", subsets.d_x.indices},
                     {"d_z", subsets.d_z.indices},
                     {"d_yx", subsets.d_yx.indices}};
  return doc.dump(1) + "\n";
}

}  // namespace trajmine

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "trajmine/flow.hpp"
#include "trajmine/matrix.hpp"
#include "trajmine/scene_features.hpp"

namespace trajmine {

inline constexpr double kDefaultLambda = 0.5;

// Per-example log-densities (nats). c_yx = c_z - lambda * c_x.
struct ScoreTable {
  double lambda = kDefaultLambda;
  std::vector<double> c_x;
  std::vector<double> c_z;
  std::vector<double> c_yx;

  std::size_t size() const { return c_x.size(); }
};

// Scores standardized feature rows; row i of both matrices is example i.
ScoreTable score_examples(const FlowModel& model_x, const FlowModel& model_z, const Matrix& features_x,
                          const Matrix& features_z, double lambda);

// Standardizes raw feature sets with each model's stored standardizer, then
// scores them. Log-densities are in standardized coordinates.
ScoreTable score_feature_sets(const FlowModel& model_x, const FlowModel& model_z, const FeatureSet& features_x,
                              const FeatureSet& features_z, double lambda);

// Recomputes the hardness column for another lambda.
ScoreTable with_lambda(const ScoreTable& scores, double lambda);

struct MinedSet {
  double threshold = 0.0;            // (k+1)-th smallest score; +inf when k = N
  std::vector<std::size_t> indices;  // k lowest scores, rank order, ties by ascending index
};

// Selects exactly floor(r * N) examples.
MinedSet mine(std::span<const double> scores, double r);

struct MinedSubsets {
  double r = 0.0;
  double lambda = 0.0;
  MinedSet d_x, d_z, d_yx;
};

MinedSubsets mine_all(const ScoreTable& scores, double r);

std::size_t mined_count(std::size_t n, double r);

// CSV: example_index,C_x,C_z,C_yx[,in_dx,in_dz,in_dyx].
std::string score_table_csv(const ScoreTable& scores, const MinedSubsets* subsets, const std::string& config_hash);
struct ScoreFile {
  ScoreTable scores;
  std::string config_hash;
};
ScoreFile parse_score_table_csv(const std::string& text);

std::string mined_summary_json(const MinedSubsets& subsets, std::size_t n, const std::string& config_hash);

}  // namespace trajmine

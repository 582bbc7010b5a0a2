#pragma once

// Batched flow evaluation shared by the flow and training modules. Columns of
// the Eigen matrices are examples.

#include <vector>

#include <Eigen/Dense>

#include "trajmine/flow.hpp"

namespace trajmine::detail {

using Mat = Eigen::MatrixXd;
using MatMap = Eigen::Map<Mat>;
using ConstMatMap = Eigen::Map<const Mat>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

struct ForwardCache {
  std::vector<Mat> fixed;  // fixed-half input of each coupling
  std::vector<Mat> h1, h2;
};

// Shift added to the moved half by one coupling.
Mat coupling_shift(const ConstCouplingParams& c, const Mat& fixed, Mat* h1 = nullptr, Mat* h2 = nullptr);

// In place: x (d x B) becomes the latent b. Returns log|det| (independent of x).
double forward_batch(const FlowModel& model, Mat& x, ForwardCache* cache = nullptr);
void inverse_batch(const FlowModel& model, Mat& b);

// Per-column log-density.
Eigen::VectorXd log_prob_batch(const FlowModel& model, const Mat& x);

// Mean negative log-likelihood over the columns. When `grad` is non-null it
// receives the derivative w.r.t. every parameter in flat order.
double nll_batch(const FlowModel& model, const Mat& x, std::vector<double>* grad);

// Columns of `x` as an Eigen matrix (rows of a Matrix are examples).
Mat to_columns(const Matrix& rows);

}  // namespace trajmine::detail

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trajmine/matrix.hpp"
#include "trajmine/scene_features.hpp"

namespace trajmine {

struct FlowConfig {
  std::size_t coupling_layers = 4;
  std::size_t hidden = 64;
  bool operator==(const FlowConfig&) const = default;
};

enum class Parity { even, odd };

// Index ranges of one coupling layer. Even parity holds the first half fixed
// and shifts the second; odd parity swaps the roles. The first half has
// ceil(d/2) entries, so an odd dimension behaves like a zero pad that never
// moves and never enters the density.
struct CouplingSplit {
  std::size_t fixed_begin = 0, fixed_size = 0;
  std::size_t moved_begin = 0, moved_size = 0;
};
CouplingSplit coupling_split(std::size_t dim, Parity parity);

// Non-owning view of one coupling MLP: fixed -> H -> H -> moved, tanh hidden
// activations, linear output. Matrices are column-major (rows x cols).
template <typename T>
struct CouplingView {
  Parity parity = Parity::even;
  CouplingSplit split;
  std::size_t hidden = 0;
  std::span<T> w1, b1;  // H x fixed, H
  std::span<T> w2, b2;  // H x H, H
  std::span<T> w3, b3;  // moved x H, moved
};
using CouplingParams = CouplingView<double>;
using ConstCouplingParams = CouplingView<const double>;

class FlowModel {
 public:
  FlowModel() = default;
  // All parameters zero: the identity flow.
  FlowModel(std::size_t dim, FlowConfig config);

  std::size_t dim() const { return dim_; }
  const FlowConfig& config() const { return config_; }
  std::size_t num_couplings() const { return config_.coupling_layers; }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }

  CouplingParams coupling(std::size_t layer);
  ConstCouplingParams coupling(std::size_t layer) const;
  std::span<double> log_scale();
  std::span<const double> log_scale() const;

  // Human-readable location of a flat parameter, e.g. "coupling[1].w2[3,7]".
  std::string parameter_path(std::size_t index) const;

  const Standardizer& standardizer() const { return standardizer_; }
  void set_standardizer(Standardizer s) { standardizer_ = std::move(s); }

  bool operator==(const FlowModel& other) const;

 private:
  std::size_t layer_size(std::size_t layer) const;
  std::size_t layer_offset(std::size_t layer) const;

  std::size_t dim_ = 0;
  FlowConfig config_;
  std::vector<double> params_;
  Standardizer standardizer_;
};

// Weights ~ N(0, 1/fan_in), biases 0, log-scales 0.
void init_parameters(FlowModel& model, std::uint64_t seed);

std::vector<double> coupling_forward(const FlowModel& model, std::size_t layer, std::span<const double> v);
std::vector<double> coupling_inverse(const FlowModel& model, std::size_t layer, std::span<const double> u);

struct FlowForward {
  std::vector<double> latent;
  double log_det = 0.0;
};

FlowForward flow_forward(const FlowModel& model, std::span<const double> v);
std::vector<double> flow_inverse(const FlowModel& model, std::span<const double> b);

// Standard-normal base: log p(b) = -(d/2) ln(2 pi) - |b|^2 / 2.
double log_prob(const FlowModel& model, std::span<const double> v);
// One log-density per row; rows are evaluated together in fixed-size chunks.
std::vector<double> log_prob_rows(const FlowModel& model, const Matrix& rows);

Matrix sample(const FlowModel& model, std::size_t n, std::uint64_t seed);

// Model file: "TRAJMINE-FLOW-1" magic, JSON header (dim, layers, hidden,
// parity order, standardizer, config hash), little-endian f64 parameters.
std::string serialize_model(const FlowModel& model, const std::string& config_hash);
struct ModelFile {
  FlowModel model;
  std::string config_hash;
};
ModelFile deserialize_model(const std::string& bytes);

}  // namespace trajmine

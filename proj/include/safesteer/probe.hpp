#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "safesteer/pca.hpp"
#include "safesteer/trace_model.hpp"

namespace safesteer {

// Scores are pre-sigmoid logits of P(harmless): larger means safer.
inline constexpr std::string_view kLabelConvention = "higher-score = safer";

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 1000;
  double l2 = 0.0;
  std::uint64_t seed = 0;
  // Per-class weights in the mean cross-entropy; 1/1 means unweighted.
  double weight_harmful = 1.0;
  double weight_harmless = 1.0;
};

struct TrainMeta {
  TrainConfig config;
  double final_loss = 0.0;
  bool operator==(const TrainMeta& o) const {
    return config.learning_rate == o.config.learning_rate && config.epochs == o.config.epochs &&
           config.l2 == o.config.l2 && config.seed == o.config.seed &&
           config.weight_harmful == o.config.weight_harmful &&
           config.weight_harmless == o.config.weight_harmless && final_loss == o.final_loss;
  }
};

struct ProbeModel {
  PcaModel pca;
  std::vector<double> weights;
  double bias = 0.0;
  // Decision cutoff on the pre-sigmoid score; HARMLESS iff score >= threshold.
  double threshold = 0.0;
  std::string label_convention{kLabelConvention};
  std::optional<TrainMeta> train_meta;
  std::optional<std::string> model;

  std::size_t dim() const { return pca.dim(); }
  bool operator==(const ProbeModel&) const = default;
};

struct TrainResult {
  ProbeModel probe;
  std::vector<double> loss_history;  // one entry per epoch, after that epoch's update
};

// Fits PCA on every sample's h0, then minimizes the (class-weighted) mean
// binary cross-entropy of sigmoid(w.v + b) with HARMLESS -> 1, HARMFUL -> 0,
// plus l2/2 * |w|^2, by full-batch gradient descent from zero.
TrainResult train_probe(std::span<const QuerySample> samples, std::size_t num_components,
                        const TrainConfig& config);

double score(const ProbeModel& probe, std::span<const double> h);
Label classify(const ProbeModel& probe, std::span<const double> h);

void validate(const ProbeModel& probe);

// The training objective on already-projected features.
struct LogisticProblem {
  std::vector<std::vector<double>> features;
  std::vector<double> targets;  // 0 or 1
  std::vector<double> sample_weights;
};

double logistic_loss(const LogisticProblem& problem, std::span<const double> w, double b, double l2);
// Returns {d/dw..., d/db}.
std::vector<double> logistic_gradient(const LogisticProblem& problem, std::span<const double> w,
                                      double b, double l2);

Json to_json(const ProbeModel& probe);
ProbeModel probe_from_json(const Json& j);
ProbeModel read_probe(const std::filesystem::path& path);
void write_probe(const ProbeModel& probe, const std::filesystem::path& path);

}  // namespace safesteer

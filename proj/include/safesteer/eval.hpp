#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "safesteer/msav.hpp"
#include "safesteer/pca.hpp"
#include "safesteer/probe.hpp"
#include "safesteer/steer_decode.hpp"
#include "safesteer/toy_transformer.hpp"

namespace safesteer {

inline constexpr int kPrefillStage = -1;

struct ProjectionPoint {
  double x = 0.0;
  double y = 0.0;
  Label label = Label::Harmless;
  Category category = Category::Benign;
  int stage = kPrefillStage;  // kPrefillStage or decoding step t
  std::string id;
};

// "PREFILL" or "STEP_<t>".
std::string stage_name(int stage);

// Coordinates on the first two principal components (y = 0 for a
// one-component model).
std::vector<ProjectionPoint> project_2d(std::span<const QuerySample> corpus, const PcaModel& pca);
// The query's h0 as PREFILL plus the committed hidden of every step as STEP_t.
std::vector<ProjectionPoint> project_2d(std::span<const DecodeTrace> traces, const PcaModel& pca);

std::vector<std::string> default_refusal_patterns();

// Fraction of texts whose lowercase form contains any (lowercased) pattern.
double refusal_rate(std::span<const std::string> texts, std::span<const std::string> patterns);

struct Separability {
  double accuracy = 0.0;
  double auc = 0.0;
};

// HARMLESS is the positive class. AUC counts every (harmless, harmful) pair,
// ties as one half.
double pairwise_auc(std::span<const double> scores, std::span<const Label> labels);
Separability separability(const ProbeModel& probe, std::span<const QuerySample> held_out);

std::map<Category, double> category_score_means(const ProbeModel& probe,
                                                std::span<const QuerySample> samples);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Wilson score interval; z defaults to the two-sided 95% quantile.
Interval wilson_interval(std::size_t successes, std::size_t trials, double z = 1.959963984540054);

struct ArmResult {
  std::string name;
  bool enable_probe = false;
  bool enable_msav = false;
  bool negate_mu = false;
  std::size_t harmful_tokens = 0;
  std::size_t total_tokens = 0;
  double rate = 0.0;
  Interval ci;
  double tokens_per_second = 0.0;
};

struct PairedConfig {
  std::size_t runs = 500;
  std::uint64_t base_seed = 0;
  // Emission is measured on the first `window` generated tokens.
  int window = 5;
  // Adds a fifth "full_negated_mu" arm steering along -mu.
  bool include_negated_mu = false;
};

struct EvalReport {
  std::string judge_note;
  std::optional<double> probe_accuracy;
  std::optional<double> probe_auc;
  std::optional<double> refusal_rate;
  std::vector<std::string> refusal_patterns;
  std::map<Category, double> category_score_means;
  std::vector<ArmResult> arms;
  Json config_echo;

  const ArmResult* arm(std::string_view name) const;
};

Json to_json(const EvalReport& report);
Json to_json(const ArmResult& arm);

// Harmful-token emission over `paired.runs` seeded generations. Run r uses
// prompts[r % prompts.size()] and seed base_seed + r, so arms are paired.
ArmResult run_arm(std::string name, const std::shared_ptr<const ToyTransformer>& model,
                  std::span<const std::vector<TokenId>> prompts, const Defenses& defenses,
                  SteerConfig config, const PairedConfig& paired);

// Arms "full", "no_dp", "no_msav", "no_both" (plus "full_negated_mu" when
// requested) on identical prompts and seeds.
EvalReport paired_comparison(std::span<const std::vector<TokenId>> prompts, const ToyConfig& backend,
                             const ProbeModel& probe, const SteeringBundle& bundle,
                             const SteerConfig& config, const PairedConfig& paired);

struct SweepCell {
  int k = 0;
  int step = 0;
  std::optional<ArmResult> result;
  std::optional<std::string> error;
};

struct SweepResult {
  ArmResult vanilla;
  std::vector<SweepCell> cells;  // k-major grid order
};

// Every (k, step) pair with the config's defense switches; a failing cell
// records its error and the sweep continues.
SweepResult sweep(std::span<const std::vector<TokenId>> prompts, const ToyConfig& backend,
                  const ProbeModel& probe, const SteeringBundle* bundle, const SteerConfig& config,
                  std::span<const int> ks, std::span<const int> steps, const PairedConfig& paired);

}  // namespace safesteer

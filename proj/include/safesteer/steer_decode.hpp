#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "safesteer/backend.hpp"
#include "safesteer/msav.hpp"
#include "safesteer/probe.hpp"
#include "safesteer/rng.hpp"

namespace safesteer {

struct SteerConfig {
  int k = 5;                 // candidate-set size
  int step_budget = 5;       // steps that resample by probe score
  double tau = 1.0;          // resampling temperature on probe scores
  double base_temperature = 1.0;
  int max_tokens = 128;
  std::uint64_t seed = 0;
  bool enable_probe = true;
  bool enable_msav = true;
  std::optional<TokenId> eos_id;
  // 0 resamples on probe scores only; lambda blends in the candidate logits
  // as lambda * logit + (1 - lambda) * score.
  double blend_lambda = 0.0;
  SteeringOptions steering;
};

void validate(const SteerConfig& config);

enum class StepMode { ProbeResample, BaseSample };
const char* to_string(StepMode mode);

struct StepAudit {
  int step = 0;
  StepMode mode = StepMode::BaseSample;
  // Empty for BaseSample steps.
  std::vector<TokenId> candidate_ids;
  std::vector<double> candidate_logits;
  std::vector<double> safety_scores;
  std::vector<double> distribution;
  TokenId chosen_token_id = 0;
};

Json to_json(const StepAudit& audit);

// The probe scores candidates and gates steering; the bundle is only used
// when config.enable_msav is set.
struct Defenses {
  const ProbeModel* probe = nullptr;
  const SteeringBundle* steering = nullptr;
};

struct GenerateResult {
  std::vector<TokenId> tokens;
  std::vector<StepAudit> audit;
  // Trace-format records: every candidate for probe steps, the committed
  // token alone for base-sampled steps.
  std::vector<StepRecord> steps;
  HiddenVec h0;
  bool steering_applied = false;
  double alpha = 0.0;
  bool stopped_on_eos = false;
};

// Top-k ids by logit, ties broken by ascending id.
std::vector<TokenId> candidate_set(std::span<const double> logits, std::size_t k);

// Softmax(x / temperature) with max-subtraction. temperature < 1e-6 gives a
// one-hot argmax (lowest index on ties).
std::vector<double> softmax(std::span<const double> x, double temperature);

// Draws u in [0, 1) from rng and returns the first index whose cumulative
// probability exceeds u.
std::size_t sample_index(std::span<const double> probabilities, Rng& rng);

// Samples an index with probability exp(s_i / tau) / sum_j exp(s_j / tau).
std::size_t resample(std::span<const double> safety_scores, double tau, Rng& rng);

GenerateResult generate(DecoderSession& session, const Defenses& defenses, const SteerConfig& config,
                        std::span<const TokenId> prompt);

// Space-separated token ids; the toy vocabulary has no surface strings.
std::string tokens_to_text(std::span<const TokenId> tokens);

}  // namespace safesteer

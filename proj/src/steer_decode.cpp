#include "safesteer/steer_decode.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "safesteer/error.hpp"
#include "safesteer/vec.hpp"

namespace safesteer {

namespace {

constexpr double kArgmaxTemperature = 1e-6;

[[noreturn]] void usage(const std::string& msg) { throw Error(ErrorKind::Usage, "generate: " + msg); }

}  // namespace

void validate(const SteerConfig& c) {
  if (c.k < 1) usage("k must be at least 1");
  if (c.step_budget < 0) usage("step budget must be nonnegative");
  if (!(c.tau > 0.0)) usage("tau must be positive");
  if (!(c.base_temperature > 0.0)) usage("base temperature must be positive");
  if (c.max_tokens < 1) usage("max_tokens must be positive");
  if (!(c.blend_lambda >= 0.0 && c.blend_lambda <= 1.0)) usage("blend lambda must be in [0, 1]");
}

const char* to_string(StepMode mode) {
  return mode == StepMode::ProbeResample ? "PROBE_RESAMPLE" : "BASE_SAMPLE";
}

Json to_json(const StepAudit& a) {
  Json j;
  j["step"] = a.step;
  j["mode"] = to_string(a.mode);
  j["candidate_ids"] = a.candidate_ids;
  j["candidate_logits"] = a.candidate_logits;
  j["safety_scores"] = a.safety_scores;
  j["distribution"] = a.distribution;
  j["chosen_token_id"] = a.chosen_token_id;
  return j;
}

std::vector<TokenId> candidate_set(std::span<const double> logits, std::size_t k) {
  if (k > logits.size()) {
    throw Error(ErrorKind::Usage, "candidate_set: k=" + std::to_string(k) + " exceeds vocabulary size " +
                                      std::to_string(logits.size()));
  }
  std::vector<TokenId> ids(logits.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                    [&](TokenId a, TokenId b) {
                      if (logits[a] != logits[b]) return logits[a] > logits[b];
                      return a < b;
                    });
  ids.resize(k);
  return ids;
}

std::vector<double> softmax(std::span<const double> x, double temperature) {
  if (x.empty()) throw Error(ErrorKind::Usage, "softmax: empty input");
  if (!vec::all_finite(x)) throw Error(ErrorKind::Numeric, "softmax: non-finite input");
  std::vector<double> p(x.size(), 0.0);
  const auto best = static_cast<std::size_t>(std::max_element(x.begin(), x.end()) - x.begin());
  if (temperature < kArgmaxTemperature) {
    p[best] = 1.0;
    return p;
  }
  const double top = x[best];
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = std::exp((x[i] - top) / temperature);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

std::size_t sample_index(std::span<const double> probabilities, Rng& rng) {
  const double u = rng.uniform();
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (probabilities[i] <= 0.0) continue;
    cumulative += probabilities[i];
    last_positive = i;
    if (u < cumulative) return i;
  }
  return last_positive;  // rounding left the cumulative sum just under u
}

std::size_t resample(std::span<const double> safety_scores, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw Error(ErrorKind::Usage, "resample: tau must be positive");
  return sample_index(softmax(safety_scores, tau), rng);
}

GenerateResult generate(DecoderSession& session, const Defenses& defenses, const SteerConfig& config,
                        std::span<const TokenId> prompt) {
  validate(config);
  const bool needs_probe = config.enable_probe || config.enable_msav;
  if (needs_probe) {
    if (defenses.probe == nullptr) usage("probe required when the probe or steering is enabled");
    vec::require_same_dim(defenses.probe->dim(), session.dim(), "generate: probe vs backend");
  }
  if (config.enable_msav) {
    if (defenses.steering == nullptr) usage("steering bundle required when steering is enabled");
    vec::require_same_dim(defenses.steering->dim(), session.dim(), "generate: steering vs backend");
  }
  if (config.enable_probe && config.step_budget > 0 &&
      static_cast<std::size_t>(config.k) > session.vocab_size()) {
    usage("k=" + std::to_string(config.k) + " exceeds vocabulary size " +
          std::to_string(session.vocab_size()));
  }

  Rng rng(config.seed);
  GenerateResult result;
  StepOutput current = session.prefill(prompt);
  result.h0 = current.hidden;

  if (config.enable_msav) {
    auto steered = apply_steering(*defenses.steering, *defenses.probe, current.hidden, config.steering);
    if (steered.applied) {
      current = session.inject_prefill_hidden(steered.h_out);
      result.steering_applied = true;
      result.alpha = steered.alpha;
    }
  }

  for (int t = 0; t < config.max_tokens; ++t) {
    StepAudit audit;
    audit.step = t;
    StepRecord record;
    record.step = t;
    try {
      if (config.enable_probe && t < config.step_budget) {
        audit.mode = StepMode::ProbeResample;
        audit.candidate_ids = candidate_set(current.logits, static_cast<std::size_t>(config.k));
        const auto outs = session.lookahead(audit.candidate_ids);
        std::vector<double> effective;
        for (std::size_t i = 0; i < outs.size(); ++i) {
          const double logit = current.logits[audit.candidate_ids[i]];
          const double s = score(*defenses.probe, outs[i].hidden);
          audit.candidate_logits.push_back(logit);
          audit.safety_scores.push_back(s);
          effective.push_back(config.blend_lambda * logit + (1.0 - config.blend_lambda) * s);
        }
        audit.distribution = softmax(effective, config.tau);
        const std::size_t idx = sample_index(audit.distribution, rng);
        audit.chosen_token_id = audit.candidate_ids[idx];

        record.candidate_token_ids = audit.candidate_ids;
        record.candidate_logits = audit.candidate_logits;
        for (const auto& o : outs) record.candidate_hiddens.push_back(o.hidden);
        record.chosen_token_id = audit.chosen_token_id;
        record.chosen_index = static_cast<int>(idx);
        current = session.commit(audit.chosen_token_id);
      } else {
        audit.mode = StepMode::BaseSample;
        const auto probs = softmax(current.logits, config.base_temperature);
        audit.chosen_token_id = static_cast<TokenId>(sample_index(probs, rng));
        const double logit = current.logits[audit.chosen_token_id];
        current = session.commit(audit.chosen_token_id);
        record.candidate_token_ids = {audit.chosen_token_id};
        record.candidate_logits = {logit};
        record.candidate_hiddens = {current.hidden};
        record.chosen_token_id = audit.chosen_token_id;
        record.chosen_index = 0;
      }
    } catch (const Error& e) {
      throw Error(e.kind(), "step " + std::to_string(t) + ": " + e.what());
    }

    result.tokens.push_back(audit.chosen_token_id);
    result.audit.push_back(std::move(audit));
    result.steps.push_back(std::move(record));
    if (config.eos_id && result.tokens.back() == *config.eos_id) {
      result.stopped_on_eos = true;
      break;
    }
  }
  return result;
}

std::string tokens_to_text(std::span<const TokenId> tokens) {
  std::ostringstream os;
  for (std::size_t i = 0; i < tokens.size(); ++i) os << (i ? " " : "") << tokens[i];
  return os.str();
}

}  // namespace safesteer

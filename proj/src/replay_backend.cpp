#include "safesteer/replay_backend.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "safesteer/error.hpp"

namespace safesteer {

namespace {

[[noreturn]] void diverge(const std::string& msg) { throw Error(ErrorKind::ReplayDivergence, msg); }

std::string join(const std::vector<TokenId>& ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? "," : "") << ids[i];
  return os.str();
}

}  // namespace

ReplaySession::ReplaySession(DecodeTrace trace, std::optional<std::size_t> vocab_size)
    : trace_(std::move(trace)) {
  validate(trace_);
  TokenId max_id = 0;
  if (trace_.prompt_tokens) {
    for (TokenId t : *trace_.prompt_tokens) max_id = std::max(max_id, t);
  }
  for (const auto& r : trace_.steps) {
    for (TokenId t : r.candidate_token_ids) max_id = std::max(max_id, t);
  }
  const std::size_t needed = static_cast<std::size_t>(max_id) + 1;
  vocab_size_ = vocab_size.value_or(needed);
  if (vocab_size_ < needed) {
    throw Error(ErrorKind::Validation, "replay: vocab_size " + std::to_string(vocab_size_) +
                                           " is smaller than recorded token id " +
                                           std::to_string(max_id));
  }
}

const StepRecord& ReplaySession::record_at(std::size_t step, const char* op) const {
  if (step >= trace_.steps.size()) {
    diverge(std::string(op) + " at step " + std::to_string(step) +
            " runs past the recorded trace (" + std::to_string(trace_.steps.size()) + " steps)");
  }
  return trace_.steps[step];
}

std::vector<double> ReplaySession::logits_for_step(std::size_t step) const {
  if (step >= trace_.steps.size()) return std::vector<double>(vocab_size_, 0.0);
  const StepRecord& r = trace_.steps[step];
  const double lowest = *std::min_element(r.candidate_logits.begin(), r.candidate_logits.end());
  std::vector<double> logits(vocab_size_, lowest - kFloorGap);
  for (std::size_t i = 0; i < r.width(); ++i) logits[r.candidate_token_ids[i]] = r.candidate_logits[i];
  return logits;
}

StepOutput ReplaySession::prefill(std::span<const TokenId> prompt) {
  if (prefilled_) throw Error(ErrorKind::Usage, "prefill: session is not fresh");
  if (prompt.empty()) throw Error(ErrorKind::Usage, "prefill: empty prompt");
  if (!trace_.prompt_tokens) {
    throw Error(ErrorKind::Validation, "replay: trace has no prompt_tokens to validate prefill against");
  }
  const std::vector<TokenId> given(prompt.begin(), prompt.end());
  if (given != *trace_.prompt_tokens) {
    diverge("prefill prompt [" + join(given) + "] differs from recorded prompt [" +
            join(*trace_.prompt_tokens) + "]");
  }
  prefilled_ = true;
  position_ = prompt.size();
  cursor_ = 0;
  return StepOutput{trace_.query.h0, logits_for_step(0)};
}

std::vector<StepOutput> ReplaySession::lookahead(std::span<const TokenId> candidates) const {
  if (!prefilled_) throw Error(ErrorKind::Usage, "lookahead: prefill has not run");
  const StepRecord& r = record_at(cursor_, "lookahead");
  const std::set<TokenId> asked(candidates.begin(), candidates.end());
  if (asked.size() != candidates.size()) throw Error(ErrorKind::Usage, "lookahead: duplicate candidates");
  const std::set<TokenId> recorded(r.candidate_token_ids.begin(), r.candidate_token_ids.end());
  if (asked != recorded) {
    std::vector<TokenId> diff;
    std::set_symmetric_difference(asked.begin(), asked.end(), recorded.begin(), recorded.end(),
                                  std::back_inserter(diff));
    diverge("lookahead at step " + std::to_string(cursor_) +
            ": candidate set differs from the recording, symmetric difference {" + join(diff) + "}");
  }
  std::vector<StepOutput> outs;
  outs.reserve(candidates.size());
  for (TokenId t : candidates) {
    const auto idx = static_cast<std::size_t>(
        std::find(r.candidate_token_ids.begin(), r.candidate_token_ids.end(), t) -
        r.candidate_token_ids.begin());
    StepOutput out;
    out.hidden = r.candidate_hiddens[idx];
    out.logits = t == r.chosen_token_id ? logits_for_step(cursor_ + 1)
                                        : std::vector<double>(vocab_size_, 0.0);
    outs.push_back(std::move(out));
  }
  return outs;
}

StepOutput ReplaySession::commit(TokenId token) {
  if (!prefilled_) throw Error(ErrorKind::Usage, "commit: prefill has not run");
  const StepRecord& r = record_at(cursor_, "commit");
  if (token != r.chosen_token_id) {
    diverge("commit at step " + std::to_string(cursor_) + ": token " + std::to_string(token) +
            " differs from recorded token " + std::to_string(r.chosen_token_id));
  }
  StepOutput out{r.candidate_hiddens[r.chosen_index], logits_for_step(cursor_ + 1)};
  ++cursor_;
  ++position_;
  return out;
}

StepOutput ReplaySession::inject_prefill_hidden(std::span<const double>) {
  throw Error(ErrorKind::Unsupported,
              "inject_prefill_hidden: the replay backend cannot recompute states off the recorded path");
}

std::uint64_t ReplaySession::state_hash() const {
  std::uint64_t h = 14695981039346656037ull;
  for (std::uint64_t v : {static_cast<std::uint64_t>(prefilled_), static_cast<std::uint64_t>(cursor_),
                          static_cast<std::uint64_t>(position_)}) {
    h ^= v;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace safesteer

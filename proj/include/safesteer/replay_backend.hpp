#pragma once

#include <optional>

#include "safesteer/backend.hpp"

namespace safesteer {

// Serves hidden states and logits recorded in a DecodeTrace. Only the
// recorded path is valid: any other prompt, candidate set or committed token
// raises ReplayDivergence.
//
// Reconstructed logits: recorded candidate logits at their ids, every other id
// set to (lowest recorded logit - 1000). Lookahead outputs for candidates that
// were not committed carry all-zero logits, since the counterfactual
// next-token distribution was never recorded.
class ReplaySession final : public DecoderSession {
 public:
  static constexpr double kFloorGap = 1000.0;

  // vocab_size defaults to one past the largest id in the trace.
  explicit ReplaySession(DecodeTrace trace, std::optional<std::size_t> vocab_size = std::nullopt);

  std::size_t vocab_size() const override { return vocab_size_; }
  std::size_t dim() const override { return trace_.query.dim(); }
  std::size_t position() const override { return position_; }
  int layer_index() const override { return trace_.query.layer_index; }
  std::string extraction_point() const override {
    return trace_.query.extraction_point.value_or("unknown");
  }

  StepOutput prefill(std::span<const TokenId> prompt) override;
  std::vector<StepOutput> lookahead(std::span<const TokenId> candidates) const override;
  StepOutput commit(TokenId token) override;
  StepOutput inject_prefill_hidden(std::span<const double> h_bar) override;
  std::uint64_t state_hash() const override;

  const DecodeTrace& trace() const { return trace_; }

 private:
  std::vector<double> logits_for_step(std::size_t step) const;
  const StepRecord& record_at(std::size_t step, const char* op) const;

  DecodeTrace trace_;
  std::size_t vocab_size_ = 0;
  bool prefilled_ = false;
  std::size_t cursor_ = 0;  // next step index
  std::size_t position_ = 0;
};

}  // namespace safesteer

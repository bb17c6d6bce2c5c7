#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "safesteer/trace_model.hpp"

namespace safesteer {

struct StepOutput {
  HiddenVec hidden;             // final layer, last position
  std::vector<double> logits;   // next-token logits, vocab_size entries
  bool operator==(const StepOutput&) const = default;
};

// One autoregressive decoding session over a KV cache. Sessions are
// single-owner; lookahead never mutates committed state.
class DecoderSession {
 public:
  virtual ~DecoderSession() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t dim() const = 0;
  // Number of tokens held in the committed cache.
  virtual std::size_t position() const = 0;
  virtual int layer_index() const = 0;
  virtual std::string extraction_point() const = 0;

  // Runs the prompt through a fresh session and returns h_0 with the
  // logits for the first generated token.
  virtual StepOutput prefill(std::span<const TokenId> prompt) = 0;

  // For each candidate, the output the model would produce after appending
  // it. Results are ordered like candidates.
  virtual std::vector<StepOutput> lookahead(std::span<const TokenId> candidates) const = 0;

  // Appends token to the cache and returns the output at the new position.
  virtual StepOutput commit(TokenId token) = 0;

  // Replaces the last prefill position's final-layer state with h_bar and
  // returns the recomputed output. Only valid right after prefill.
  virtual StepOutput inject_prefill_hidden(std::span<const double> h_bar) = 0;

  // Digest of all commit-visible state.
  virtual std::uint64_t state_hash() const = 0;
};

}  // namespace safesteer

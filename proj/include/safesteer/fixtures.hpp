#pragma once

// Synthetic corpora and prompts used by tests, the acceptance suite and the
// CLI's make-corpus command.

#include <cstdint>
#include <memory>
#include <vector>

#include "safesteer/rng.hpp"
#include "safesteer/toy_transformer.hpp"
#include "safesteer/trace_model.hpp"

namespace safesteer {

// 200 harmless BENIGN samples plus 50 each of CB/SD/TYPO/SDTYPO by default.
struct CorpusComposition {
  std::size_t benign = 200;
  std::size_t per_attack = 50;
};

// Vocabulary 128, d=32, 2 layers, 4 heads; ids 16..31 planted safe, 32..47
// planted harmful, magnitude 4.
ToyConfig standard_planted_config();

// Two isotropic unit-variance Gaussian clusters whose means lie
// separation_sigma apart along a random unit direction; harmless on the
// positive side.
std::vector<QuerySample> gaussian_corpus(std::size_t dim, double separation_sigma,
                                         CorpusComposition composition, std::uint64_t seed);

// Prompt layout per category (neutral tokens carry no planted sign):
//   BENIGN  neutral body + safe final token
//   CB      neutral body + harmful final token
//   SD      neutral body + neutral final token
//   TYPO    body with one harmful token inside + neutral final token
//   SDTYPO  harmful first token, neutral rest
// Requires a planted model.
std::vector<TokenId> planted_prompt(const ToyTransformer& model, Category category, Rng& rng,
                                    std::size_t length = 7);

std::vector<std::vector<TokenId>> attack_prompts(const ToyTransformer& model, Category category,
                                                 std::size_t count, std::uint64_t seed);

// Prefill h0 of planted prompts, one QuerySample per prompt.
std::vector<QuerySample> planted_corpus(std::shared_ptr<const ToyTransformer> model,
                                        CorpusComposition composition, std::uint64_t seed);

}  // namespace safesteer

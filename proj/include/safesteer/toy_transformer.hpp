#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "safesteer/backend.hpp"

namespace safesteer {

// Planted semantics: appending a safe id adds +magnitude * u to the final
// hidden state at that position, a harmful id adds -magnitude * u, and the
// LM-head rows of safe/harmful ids are shifted by +u/-u. Safe and harmful
// continuations are therefore linearly separable along u, and a state that
// leans along +u favours safe next tokens.
struct PlantedConfig {
  std::vector<TokenId> safe_ids;
  std::vector<TokenId> harmful_ids;
  std::uint64_t direction_seed = 0;
  double magnitude = 4.0;
  bool operator==(const PlantedConfig&) const = default;
};

struct ToyConfig {
  std::uint64_t seed = 0;
  int dim = 32;
  int layers = 2;
  int heads = 4;
  int vocab_size = 128;
  std::optional<PlantedConfig> planted;
  bool operator==(const ToyConfig&) const = default;
};

void validate(const ToyConfig& config);
Json to_json(const ToyConfig& config);
ToyConfig toy_config_from_json(const Json& j);
ToyConfig read_toy_config(const std::filesystem::path& path);

// Row-major matrices.
struct ToyLayerWeights {
  std::vector<double> wq, wk, wv, wo;  // dim x dim
  std::vector<double> w1, b1;          // 4dim x dim, 4dim
  std::vector<double> w2, b2;          // dim x 4dim, dim
};

struct ToyWeights {
  std::vector<double> token_embedding;  // vocab x dim
  std::vector<ToyLayerWeights> layers;
  std::vector<double> head;             // vocab x dim
  std::vector<double> plant_direction;  // unit vector, empty when unplanted
  std::vector<int> plant_sign;          // per token: +1 safe, -1 harmful, 0 neutral
  double plant_magnitude = 0.0;
};

// Pre-norm decoder-only transformer with seeded weights,
// sinusoidal positions and an unparameterized layer norm. The exposed
// hidden state is the final layer norm output plus the planted offset.
class ToyTransformer {
 public:
  static constexpr double kNormEps = 1e-5;

  explicit ToyTransformer(ToyConfig config);

  const ToyConfig& config() const { return config_; }
  const ToyWeights& weights() const { return weights_; }
  std::size_t dim() const { return static_cast<std::size_t>(config_.dim); }
  std::size_t vocab_size() const { return static_cast<std::size_t>(config_.vocab_size); }

  // +1 planted safe, -1 planted harmful, 0 otherwise.
  int plant_sign(TokenId token) const;
  bool is_harmful(TokenId token) const { return plant_sign(token) < 0; }

  std::vector<double> logits_from_hidden(std::span<const double> hidden) const;

  static std::vector<double> positional_encoding(std::size_t position, std::size_t dim);

 private:
  ToyConfig config_;
  ToyWeights weights_;
};

class ToySession final : public DecoderSession {
 public:
  explicit ToySession(std::shared_ptr<const ToyTransformer> model);

  std::size_t vocab_size() const override { return model_->vocab_size(); }
  std::size_t dim() const override { return model_->dim(); }
  std::size_t position() const override { return tokens_.size(); }
  int layer_index() const override { return model_->config().layers - 1; }
  std::string extraction_point() const override { return "post_final_norm"; }

  StepOutput prefill(std::span<const TokenId> prompt) override;
  std::vector<StepOutput> lookahead(std::span<const TokenId> candidates) const override;
  StepOutput commit(TokenId token) override;
  StepOutput inject_prefill_hidden(std::span<const double> h_bar) override;
  std::uint64_t state_hash() const override;

  std::span<const TokenId> tokens() const { return tokens_; }

 private:
  struct PendingKv {
    std::vector<std::vector<double>> keys;    // per layer, dim
    std::vector<std::vector<double>> values;  // per layer, dim
  };

  StepOutput forward(TokenId token, PendingKv* pending) const;
  void check_token(TokenId token) const;

  std::shared_ptr<const ToyTransformer> model_;
  std::vector<TokenId> tokens_;
  std::vector<std::vector<double>> key_cache_;    // per layer, position-major
  std::vector<std::vector<double>> value_cache_;  // per layer, position-major
  StepOutput last_;
  std::size_t prompt_length_ = 0;
};

}  // namespace safesteer

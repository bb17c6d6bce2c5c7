#include "safesteer/toy_transformer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <set>

#include "safesteer/error.hpp"
#include "safesteer/rng.hpp"
#include "safesteer/vec.hpp"

namespace safesteer {

namespace {

std::vector<double> gaussian(Rng& rng, std::size_t n, double scale) {
  std::vector<double> out(n);
  for (double& x : out) x = rng.normal() * scale;
  return out;
}

// y = W x, W row-major rows x cols.
std::vector<double> matvec(const std::vector<double>& w, std::span<const double> x, std::size_t rows) {
  const std::size_t cols = x.size();
  std::vector<double> y(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &w[r * cols];
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
  return y;
}

std::vector<double> layer_norm(std::span<const double> x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(var + ToyTransformer::kNormEps);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mean) * inv;
  return out;
}

double gelu(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

void hash_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
}

template <typename T>
void hash_vector(std::uint64_t& h, const std::vector<T>& v) {
  const std::uint64_t n = v.size();
  hash_bytes(h, &n, sizeof n);
  if (!v.empty()) hash_bytes(h, v.data(), v.size() * sizeof(T));
}

}  // namespace

void validate(const ToyConfig& c) {
  auto usage = [](const std::string& msg) { throw Error(ErrorKind::Validation, "toy config: " + msg); };
  if (c.dim <= 0 || c.layers <= 0 || c.heads <= 0 || c.vocab_size < 2) {
    usage("dim, layers, heads must be positive and vocab_size >= 2");
  }
  if (c.dim % c.heads != 0) usage("dim must be divisible by heads");
  if (c.planted) {
    std::set<TokenId> seen;
    for (const auto* ids : {&c.planted->safe_ids, &c.planted->harmful_ids}) {
      for (TokenId id : *ids) {
        if (id < 0 || id >= c.vocab_size) usage("planted id " + std::to_string(id) + " out of range");
        if (!seen.insert(id).second) usage("planted id " + std::to_string(id) + " listed twice");
      }
    }
    if (!(c.planted->magnitude >= 0.0) || !std::isfinite(c.planted->magnitude)) {
      usage("planted magnitude must be finite and nonnegative");
    }
  }
}

Json to_json(const ToyConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["dim"] = c.dim;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["vocab_size"] = c.vocab_size;
  if (c.planted) {
    j["planted"] = {{"safe_ids", c.planted->safe_ids},
                    {"harmful_ids", c.planted->harmful_ids},
                    {"direction_seed", c.planted->direction_seed},
                    {"magnitude", c.planted->magnitude}};
  }
  return j;
}

ToyConfig toy_config_from_json(const Json& j) {
  ToyConfig c;
  try {
    c.seed = j.at("seed").get<std::uint64_t>();
    c.dim = j.at("dim").get<int>();
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    if (auto it = j.find("planted"); it != j.end() && !it->is_null()) {
      PlantedConfig p;
      p.safe_ids = it->at("safe_ids").get<std::vector<TokenId>>();
      p.harmful_ids = it->at("harmful_ids").get<std::vector<TokenId>>();
      p.direction_seed = it->at("direction_seed").get<std::uint64_t>();
      p.magnitude = it->at("magnitude").get<double>();
      c.planted = std::move(p);
    }
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("toy config: ") + e.what());
  }
  validate(c);
  return c;
}

ToyConfig read_toy_config(const std::filesystem::path& path) {
  return toy_config_from_json(read_json_file(path));
}

ToyTransformer::ToyTransformer(ToyConfig config) : config_(std::move(config)) {
  validate(config_);
  const std::size_t d = dim();
  const std::size_t v = vocab_size();
  const std::size_t ff = 4 * d;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  Rng rng(config_.seed);
  weights_.token_embedding = gaussian(rng, v * d, 1.0);
  for (int l = 0; l < config_.layers; ++l) {
    ToyLayerWeights lw;
    lw.wq = gaussian(rng, d * d, inv_sqrt_d);
    lw.wk = gaussian(rng, d * d, inv_sqrt_d);
    lw.wv = gaussian(rng, d * d, inv_sqrt_d);
    lw.wo = gaussian(rng, d * d, inv_sqrt_d);
    lw.w1 = gaussian(rng, ff * d, inv_sqrt_d);
    lw.b1.assign(ff, 0.0);
    lw.w2 = gaussian(rng, d * ff, 1.0 / std::sqrt(static_cast<double>(ff)));
    lw.b2.assign(d, 0.0);
    weights_.layers.push_back(std::move(lw));
  }
  weights_.head = gaussian(rng, v * d, inv_sqrt_d);
  weights_.plant_sign.assign(v, 0);

  if (config_.planted) {
    Rng dir_rng(config_.planted->direction_seed);
    auto u = gaussian(dir_rng, d, 1.0);
    const double len = vec::norm(u);
    for (double& x : u) x /= len;
    weights_.plant_direction = u;
    weights_.plant_magnitude = config_.planted->magnitude;
    for (TokenId id : config_.planted->safe_ids) weights_.plant_sign[id] = 1;
    for (TokenId id : config_.planted->harmful_ids) weights_.plant_sign[id] = -1;
    for (std::size_t t = 0; t < v; ++t) {
      const int s = weights_.plant_sign[t];
      if (s == 0) continue;
      for (std::size_t i = 0; i < d; ++i) weights_.head[t * d + i] += s * u[i];
    }
  }
}

int ToyTransformer::plant_sign(TokenId token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_size()) return 0;
  return weights_.plant_sign[token];
}

std::vector<double> ToyTransformer::logits_from_hidden(std::span<const double> hidden) const {
  vec::require_same_dim(hidden.size(), dim(), "logits_from_hidden");
  return matvec(weights_.head, hidden, vocab_size());
}

std::vector<double> ToyTransformer::positional_encoding(std::size_t position, std::size_t dim) {
  std::vector<double> pe(dim);
  for (std::size_t i = 0; i < dim; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
    pe[i] = std::sin(static_cast<double>(position) * freq);
    if (i + 1 < dim) pe[i + 1] = std::cos(static_cast<double>(position) * freq);
  }
  return pe;
}

ToySession::ToySession(std::shared_ptr<const ToyTransformer> model) : model_(std::move(model)) {
  if (!model_) throw Error(ErrorKind::Usage, "ToySession: null model");
  key_cache_.resize(model_->config().layers);
  value_cache_.resize(model_->config().layers);
}

void ToySession::check_token(TokenId token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= vocab_size()) {
    throw Error(ErrorKind::Usage, "token id " + std::to_string(token) + " out of range [0, " +
                                      std::to_string(vocab_size()) + ")");
  }
}

// Runs one token at the next position against the committed cache. The new
// key/value pair is handed back through `pending` instead of being cached, so
// lookahead and commit execute the identical arithmetic.
StepOutput ToySession::forward(TokenId token, PendingKv* pending) const {
  const ToyWeights& w = model_->weights();
  const std::size_t d = dim();
  const std::size_t heads = static_cast<std::size_t>(model_->config().heads);
  const std::size_t hd = d / heads;
  const std::size_t pos = tokens_.size();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> x(w.token_embedding.begin() + token * d,
                        w.token_embedding.begin() + (token + 1) * d);
  const auto pe = ToyTransformer::positional_encoding(pos, d);
  for (std::size_t i = 0; i < d; ++i) x[i] += pe[i];

  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const ToyLayerWeights& lw = w.layers[l];
    const auto a = layer_norm(x);
    const auto q = matvec(lw.wq, a, d);
    auto k = matvec(lw.wk, a, d);
    auto v = matvec(lw.wv, a, d);

    const std::vector<double>& kc = key_cache_[l];
    const std::vector<double>& vc = value_cache_[l];
    auto key_at = [&](std::size_t j) { return j < pos ? &kc[j * d] : k.data(); };
    auto value_at = [&](std::size_t j) { return j < pos ? &vc[j * d] : v.data(); };

    std::vector<double> attn(d, 0.0);
    std::vector<double> weights(pos + 1);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * hd;
      double max_score = -INFINITY;
      for (std::size_t j = 0; j <= pos; ++j) {
        const double* kj = key_at(j) + off;
        double s = 0.0;
        for (std::size_t i = 0; i < hd; ++i) s += q[off + i] * kj[i];
        weights[j] = s * scale;
        max_score = std::max(max_score, weights[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j <= pos; ++j) {
        weights[j] = std::exp(weights[j] - max_score);
        total += weights[j];
      }
      for (std::size_t j = 0; j <= pos; ++j) {
        const double* vj = value_at(j) + off;
        const double p = weights[j] / total;
        for (std::size_t i = 0; i < hd; ++i) attn[off + i] += p * vj[i];
      }
    }
    const auto proj = matvec(lw.wo, attn, d);
    for (std::size_t i = 0; i < d; ++i) x[i] += proj[i];

    const auto a2 = layer_norm(x);
    auto hidden = matvec(lw.w1, a2, 4 * d);
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = gelu(hidden[i] + lw.b1[i]);
    const auto mlp = matvec(lw.w2, hidden, d);
    for (std::size_t i = 0; i < d; ++i) x[i] += mlp[i] + lw.b2[i];

    if (pending != nullptr) {
      pending->keys.push_back(std::move(k));
      pending->values.push_back(std::move(v));
    }
  }

  StepOutput out;
  out.hidden = layer_norm(x);
  if (const int sign = model_->plant_sign(token); sign != 0) {
    for (std::size_t i = 0; i < d; ++i) {
      out.hidden[i] += sign * w.plant_magnitude * w.plant_direction[i];
    }
  }
  out.logits = model_->logits_from_hidden(out.hidden);
  return out;
}

StepOutput ToySession::prefill(std::span<const TokenId> prompt) {
  if (!tokens_.empty()) throw Error(ErrorKind::Usage, "prefill: session is not fresh");
  if (prompt.empty()) throw Error(ErrorKind::Usage, "prefill: empty prompt");
  for (TokenId t : prompt) check_token(t);
  for (TokenId t : prompt) commit(t);
  prompt_length_ = prompt.size();
  return last_;
}

std::vector<StepOutput> ToySession::lookahead(std::span<const TokenId> candidates) const {
  if (tokens_.empty()) throw Error(ErrorKind::Usage, "lookahead: prefill has not run");
  std::set<TokenId> seen;
  for (TokenId t : candidates) {
    check_token(t);
    if (!seen.insert(t).second) throw Error(ErrorKind::Usage, "lookahead: duplicate candidate " + std::to_string(t));
  }
  std::vector<StepOutput> outs;
  outs.reserve(candidates.size());
  for (TokenId t : candidates) outs.push_back(forward(t, nullptr));
  return outs;
}

StepOutput ToySession::commit(TokenId token) {
  check_token(token);
  PendingKv pending;
  StepOutput out = forward(token, &pending);
  const std::size_t d = dim();
  for (std::size_t l = 0; l < key_cache_.size(); ++l) {
    key_cache_[l].insert(key_cache_[l].end(), pending.keys[l].begin(), pending.keys[l].begin() + d);
    value_cache_[l].insert(value_cache_[l].end(), pending.values[l].begin(), pending.values[l].begin() + d);
  }
  tokens_.push_back(token);
  last_ = out;
  return out;
}

StepOutput ToySession::inject_prefill_hidden(std::span<const double> h_bar) {
  if (tokens_.empty()) throw Error(ErrorKind::Usage, "inject_prefill_hidden: prefill has not run");
  if (tokens_.size() != prompt_length_) {
    throw Error(ErrorKind::Usage, "inject_prefill_hidden: tokens were already committed after prefill");
  }
  vec::require_same_dim(h_bar.size(), dim(), "inject_prefill_hidden");
  if (!vec::all_finite(h_bar)) throw Error(ErrorKind::Validation, "inject_prefill_hidden: non-finite state");
  // The final-layer state feeds no key/value, so only the next-token logits move.
  last_.hidden.assign(h_bar.begin(), h_bar.end());
  last_.logits = model_->logits_from_hidden(last_.hidden);
  return last_;
}

std::uint64_t ToySession::state_hash() const {
  std::uint64_t h = 14695981039346656037ull;
  hash_vector(h, tokens_);
  for (const auto& c : key_cache_) hash_vector(h, c);
  for (const auto& c : value_cache_) hash_vector(h, c);
  hash_vector(h, last_.hidden);
  hash_vector(h, last_.logits);
  const std::uint64_t plen = prompt_length_;
  hash_bytes(h, &plen, sizeof plen);
  return h;
}

}  // namespace safesteer

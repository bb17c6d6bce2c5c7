#include "safesteer/fixtures.hpp"

#include <cstdio>

#include "safesteer/error.hpp"
#include "safesteer/rng.hpp"
#include "safesteer/vec.hpp"

namespace safesteer {

namespace {

std::string sample_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%04zu", prefix, i);
  return buf;
}

TokenId pick(const std::vector<TokenId>& pool, Rng& rng) {
  return pool[static_cast<std::size_t>(rng.next_u64() % pool.size())];
}

std::vector<Category> category_schedule(CorpusComposition c) {
  std::vector<Category> out(c.benign, Category::Benign);
  for (Category cat : {Category::CB, Category::SD, Category::TYPO, Category::SDTYPO}) {
    out.insert(out.end(), c.per_attack, cat);
  }
  return out;
}

}  // namespace

ToyConfig standard_planted_config() {
  ToyConfig c;
  c.seed = 7;
  c.dim = 32;
  c.layers = 2;
  c.heads = 4;
  c.vocab_size = 128;
  PlantedConfig p;
  for (TokenId id = 16; id < 32; ++id) p.safe_ids.push_back(id);
  for (TokenId id = 32; id < 48; ++id) p.harmful_ids.push_back(id);
  p.direction_seed = 11;
  p.magnitude = 4.0;
  c.planted = p;
  return c;
}

std::vector<QuerySample> gaussian_corpus(std::size_t dim, double separation_sigma,
                                         CorpusComposition composition, std::uint64_t seed) {
  if (dim == 0) throw Error(ErrorKind::Usage, "gaussian_corpus: dim must be positive");
  Rng rng(seed);
  std::vector<double> direction(dim);
  for (double& x : direction) x = rng.normal();
  const double len = vec::norm(direction);
  for (double& x : direction) x /= len;

  std::vector<QuerySample> out;
  std::size_t i = 0;
  for (Category cat : category_schedule(composition)) {
    QuerySample s;
    s.id = sample_id("gauss", i++);
    s.category = cat;
    s.label = implied_label(cat);
    const double side = s.label == Label::Harmless ? 0.5 : -0.5;
    s.h0.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) s.h0[j] = side * separation_sigma * direction[j] + rng.normal();
    s.layer_index = 0;
    s.extraction_point = "synthetic";
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TokenId> planted_prompt(const ToyTransformer& model, Category category, Rng& rng,
                                    std::size_t length) {
  const auto& planted = model.config().planted;
  if (!planted || planted->safe_ids.empty() || planted->harmful_ids.empty()) {
    throw Error(ErrorKind::Usage, "planted_prompt: model has no planted safe/harmful ids");
  }
  if (length < 3) throw Error(ErrorKind::Usage, "planted_prompt: length must be at least 3");
  std::vector<TokenId> neutral;
  for (std::size_t t = 0; t < model.vocab_size(); ++t) {
    if (model.plant_sign(static_cast<TokenId>(t)) == 0) neutral.push_back(static_cast<TokenId>(t));
  }
  if (neutral.empty()) throw Error(ErrorKind::Usage, "planted_prompt: no neutral tokens left");

  std::vector<TokenId> prompt(length);
  for (auto& t : prompt) t = pick(neutral, rng);
  switch (category) {
    case Category::Benign:
      prompt.back() = pick(planted->safe_ids, rng);
      break;
    case Category::CB:
      prompt.back() = pick(planted->harmful_ids, rng);
      break;
    case Category::SD:
      break;
    case Category::TYPO:
      prompt[1 + rng.next_u64() % (length - 2)] = pick(planted->harmful_ids, rng);
      break;
    case Category::SDTYPO:
      prompt.front() = pick(planted->harmful_ids, rng);
      break;
  }
  return prompt;
}

std::vector<std::vector<TokenId>> attack_prompts(const ToyTransformer& model, Category category,
                                                 std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<TokenId>> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(planted_prompt(model, category, rng));
  return out;
}

std::vector<QuerySample> planted_corpus(std::shared_ptr<const ToyTransformer> model,
                                        CorpusComposition composition, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<QuerySample> out;
  std::size_t i = 0;
  for (Category cat : category_schedule(composition)) {
    const auto prompt = planted_prompt(*model, cat, rng);
    ToySession session(model);
    const StepOutput o = session.prefill(prompt);
    QuerySample s;
    s.id = sample_id("planted", i++);
    s.category = cat;
    s.label = implied_label(cat);
    s.h0 = o.hidden;
    s.layer_index = session.layer_index();
    s.extraction_point = session.extraction_point();
    s.model = "toy-seed-" + std::to_string(model->config().seed);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace safesteer

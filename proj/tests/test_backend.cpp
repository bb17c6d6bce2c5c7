#include <cmath>
#include <cstring>

#include "doctest.h"
#include "oracles.hpp"
#include "safesteer/fixtures.hpp"
#include "safesteer/replay_backend.hpp"
#include "safesteer/rng.hpp"
#include "safesteer/steer_decode.hpp"
#include "safesteer/toy_transformer.hpp"
#include "test_util.hpp"

using namespace safesteer;

namespace {

std::shared_ptr<const ToyTransformer> planted() {
  static const auto model = std::make_shared<const ToyTransformer>(standard_planted_config());
  return model;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

const std::vector<TokenId> kPrompt = {5, 60, 17, 90, 33, 2};

}  // namespace

TEST_CASE("toy config validation and JSON") {
  ToyConfig c;
  CHECK_NOTHROW(validate(c));
  c.heads = 5;
  CHECK(testutil::error_kind([&] { validate(c); }) == ErrorKind::Validation);
  const auto std_cfg = standard_planted_config();
  CHECK(toy_config_from_json(to_json(std_cfg)) == std_cfg);
  auto dup = std_cfg;
  dup.planted->harmful_ids.push_back(dup.planted->safe_ids[0]);
  CHECK_THROWS_AS(validate(dup), Error);
  auto out_of_range = std_cfg;
  out_of_range.planted->safe_ids.push_back(500);
  CHECK_THROWS_AS(validate(out_of_range), Error);
}

TEST_CASE("prefill is deterministic across sessions and model instances") {
  ToySession a(planted());
  ToySession b(std::make_shared<const ToyTransformer>(standard_planted_config()));
  const auto oa = a.prefill(kPrompt);
  const auto ob = b.prefill(kPrompt);
  CHECK(bit_equal(oa.hidden, ob.hidden));
  CHECK(bit_equal(oa.logits, ob.logits));
  CHECK(a.state_hash() == b.state_hash());
  CHECK(a.position() == kPrompt.size());
  CHECK(oa.logits.size() == 128);
  CHECK(oa.hidden.size() == 32);
}

TEST_CASE("prefill preconditions") {
  ToySession s(planted());
  CHECK(testutil::error_kind([&] { s.prefill(std::vector<TokenId>{}); }) == ErrorKind::Usage);
  CHECK_THROWS_AS(s.prefill(std::vector<TokenId>{1, 128}), Error);
  CHECK_THROWS_AS(s.prefill(std::vector<TokenId>{-1}), Error);
  CHECK_THROWS_AS(s.lookahead(std::vector<TokenId>{1}), Error);
  s.prefill(kPrompt);
  CHECK_THROWS_AS(s.prefill(kPrompt), Error);
  CHECK_THROWS_AS(s.commit(128), Error);
  CHECK_THROWS_AS(s.lookahead(std::vector<TokenId>{1, 1}), Error);
}

TEST_CASE("lookahead then commit gives the identical output") {
  ToySession s(planted());
  s.prefill(kPrompt);
  const std::vector<TokenId> cands = {17, 40, 3, 99, 64};
  for (int step = 0; step < 6; ++step) {
    const auto before = s.state_hash();
    const auto outs = s.lookahead(cands);
    CHECK(outs.size() == cands.size());
    CHECK(s.state_hash() == before);
    const std::size_t pick = static_cast<std::size_t>(step) % cands.size();
    const auto committed = s.commit(cands[pick]);
    CHECK(bit_equal(committed.hidden, outs[pick].hidden));
    CHECK(bit_equal(committed.logits, outs[pick].logits));
  }
}

TEST_CASE("k=1 lookahead") {
  ToySession s(planted());
  s.prefill(kPrompt);
  CHECK(s.lookahead(std::vector<TokenId>{7}).size() == 1);
}

TEST_CASE("cached outputs equal the cache-free oracle") {
  const auto model = planted();
  ToySession s(model);
  std::vector<TokenId> seq = kPrompt;
  auto out = s.prefill(kPrompt);
  auto ref = oracle::full_forward(*model, seq);
  CHECK(max_abs_diff(out.hidden, ref.hidden) <= 1e-6);
  CHECK(max_abs_diff(out.logits, ref.logits) <= 1e-6);

  const std::vector<TokenId> cands = {20, 35, 0, 127, 64};
  const auto outs = s.lookahead(cands);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    auto ext = seq;
    ext.push_back(cands[i]);
    const auto r = oracle::full_forward(*model, ext);
    CHECK(max_abs_diff(outs[i].hidden, r.hidden) <= 1e-6);
    CHECK(max_abs_diff(outs[i].logits, r.logits) <= 1e-6);
  }
  for (TokenId t : {11, 44, 19}) {
    out = s.commit(t);
    seq.push_back(t);
    ref = oracle::full_forward(*model, seq);
    CHECK(max_abs_diff(out.hidden, ref.hidden) <= 1e-6);
    CHECK(max_abs_diff(out.logits, ref.logits) <= 1e-6);
  }
}

TEST_CASE("planted tokens shift the exposed state along the direction") {
  const auto model = planted();
  const auto& u = model->weights().plant_direction;
  ToySession s(model);
  s.prefill(kPrompt);
  const auto outs = s.lookahead(std::vector<TokenId>{16, 32, 0});
  auto along = [&](const HiddenVec& h) {
    double p = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) p += h[i] * u[i];
    return p;
  };
  CHECK(along(outs[0].hidden) > along(outs[2].hidden) + 2.0);
  CHECK(along(outs[1].hidden) < along(outs[2].hidden) - 2.0);
  CHECK(model->plant_sign(16) == 1);
  CHECK(model->is_harmful(47));
  CHECK_FALSE(model->is_harmful(48));
}

TEST_CASE("injection") {
  const auto model = planted();
  SUBCASE("unmodified h0 leaves logits bit-identical") {
    ToySession s(model);
    const auto out = s.prefill(kPrompt);
    const auto again = s.inject_prefill_hidden(out.hidden);
    CHECK(bit_equal(again.logits, out.logits));
    ToySession ref(model);
    ref.prefill(kPrompt);
    CHECK(bit_equal(s.commit(9).logits, ref.commit(9).logits));
  }
  SUBCASE("a small perturbation moves logits by at most the head column norm") {
    ToySession s(model);
    const auto out = s.prefill(kPrompt);
    auto h = out.hidden;
    constexpr double eps = 1e-3;
    h[0] += eps;
    const auto moved = s.inject_prefill_hidden(h);
    const auto& head = model->weights().head;
    const std::size_t d = model->dim();
    double col_norm = 0.0;
    for (std::size_t v = 0; v < model->vocab_size(); ++v) col_norm += head[v * d] * head[v * d];
    col_norm = std::sqrt(col_norm);
    double delta = 0.0;
    for (std::size_t v = 0; v < moved.logits.size(); ++v) {
      delta += (moved.logits[v] - out.logits[v]) * (moved.logits[v] - out.logits[v]);
    }
    CHECK(std::sqrt(delta) <= col_norm * eps * (1 + 1e-6));
    CHECK(std::sqrt(delta) >= col_norm * eps * (1 - 1e-6));
  }
  SUBCASE("only right after prefill") {
    ToySession s(model);
    CHECK_THROWS_AS(s.inject_prefill_hidden(HiddenVec(32, 0.0)), Error);
    const auto out = s.prefill(kPrompt);
    CHECK(testutil::error_kind([&] { s.inject_prefill_hidden(HiddenVec(31, 0.0)); }) == ErrorKind::Dimension);
    s.commit(3);
    CHECK(testutil::error_kind([&] { s.inject_prefill_hidden(out.hidden); }) == ErrorKind::Usage);
  }
}

TEST_CASE("purity across random episodes") {
  const auto model = planted();
  for (std::uint64_t ep = 0; ep < 10; ++ep) {
    Rng rng(ep);
    ToySession s(model);
    std::vector<TokenId> prompt(3 + ep % 5);
    for (auto& t : prompt) t = static_cast<TokenId>(rng.next_u64() % 128);
    s.prefill(prompt);
    for (int step = 0; step < 4; ++step) {
      const auto h = s.state_hash();
      std::vector<TokenId> cands;
      while (cands.size() < 5) {
        const auto t = static_cast<TokenId>(rng.next_u64() % 128);
        if (std::find(cands.begin(), cands.end(), t) == cands.end()) cands.push_back(t);
      }
      s.lookahead(cands);
      s.lookahead(cands);
      CHECK(s.state_hash() == h);
      s.commit(cands[0]);
      CHECK(s.state_hash() != h);
    }
  }
}

namespace {

DecodeTrace recorded_trace() {
  ToySession s(planted());
  const auto probe = testutil::hand_probe(std::vector<double>(32, 0.1), 0.0);
  SteerConfig cfg;
  cfg.enable_msav = false;
  cfg.max_tokens = 8;
  cfg.seed = 3;
  const auto result = generate(s, {&probe, nullptr}, cfg, kPrompt);
  DecodeTrace t;
  t.query.id = "r";
  t.query.category = Category::SD;
  t.query.label = Label::Harmful;
  t.query.h0 = result.h0;
  t.prompt_tokens = kPrompt;
  t.steps = result.steps;
  return t;
}

}  // namespace

TEST_CASE("replay serves the recording") {
  const auto trace = recorded_trace();
  ReplaySession s(trace, 128);
  CHECK(s.vocab_size() == 128);
  const auto out = s.prefill(kPrompt);
  CHECK(bit_equal(out.hidden, trace.query.h0));
  const auto& r0 = trace.steps[0];
  for (std::size_t i = 0; i < r0.width(); ++i) CHECK(out.logits[r0.candidate_token_ids[i]] == r0.candidate_logits[i]);
  const double lowest = *std::min_element(r0.candidate_logits.begin(), r0.candidate_logits.end());
  CHECK(out.logits[127] == lowest - ReplaySession::kFloorGap);
  CHECK(candidate_set(out.logits, r0.width()) == r0.candidate_token_ids);

  const auto before = s.state_hash();
  const auto outs = s.lookahead(r0.candidate_token_ids);
  CHECK(s.state_hash() == before);
  for (std::size_t i = 0; i < r0.width(); ++i) CHECK(bit_equal(outs[i].hidden, r0.candidate_hiddens[i]));
  const auto committed = s.commit(r0.chosen_token_id);
  CHECK(bit_equal(committed.hidden, r0.candidate_hiddens[r0.chosen_index]));
  CHECK(s.position() == kPrompt.size() + 1);
}

TEST_CASE("replay rejects every divergence") {
  const auto trace = recorded_trace();
  SUBCASE("prompt") {
    ReplaySession s(trace);
    CHECK(testutil::error_kind([&] { s.prefill(std::vector<TokenId>{1, 2}); }) == ErrorKind::ReplayDivergence);
  }
  SUBCASE("candidate set lists the symmetric difference") {
    ReplaySession s(trace);
    s.prefill(kPrompt);
    auto cands = trace.steps[0].candidate_token_ids;
    const TokenId dropped = cands.back();
    TokenId added = 0;
    while (std::find(cands.begin(), cands.end(), added) != cands.end()) ++added;
    cands.back() = added;
    const auto msg = testutil::error_message([&] { s.lookahead(cands); });
    CHECK(msg.find("step 0") != std::string::npos);
    const auto lo = std::min(added, dropped), hi = std::max(added, dropped);
    CHECK(msg.find("{" + std::to_string(lo) + "," + std::to_string(hi) + "}") != std::string::npos);
  }
  SUBCASE("commit") {
    ReplaySession s(trace);
    s.prefill(kPrompt);
    const TokenId other = trace.steps[0].chosen_token_id == 0 ? 1 : 0;
    CHECK(testutil::error_kind([&] { s.commit(other); }) == ErrorKind::ReplayDivergence);
  }
  SUBCASE("past the end") {
    ReplaySession s(trace);
    s.prefill(kPrompt);
    for (const auto& r : trace.steps) s.commit(r.chosen_token_id);
    CHECK(testutil::error_kind([&] { s.commit(0); }) == ErrorKind::ReplayDivergence);
  }
  SUBCASE("injection is unsupported") {
    ReplaySession s(trace);
    s.prefill(kPrompt);
    CHECK(testutil::error_kind([&] { s.inject_prefill_hidden(trace.query.h0); }) == ErrorKind::Unsupported);
  }
  SUBCASE("a trace without prompt tokens cannot prefill") {
    auto t = trace;
    t.prompt_tokens.reset();
    ReplaySession s(t);
    CHECK_THROWS_AS(s.prefill(kPrompt), Error);
  }
  SUBCASE("vocab smaller than a recorded id") {
    CHECK_THROWS_AS(ReplaySession(trace, 10), Error);
  }
}

#include <algorithm>
#include <cmath>
#include <numeric>

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

// Probe scoring c * <u, h> + b, with u the planted direction.
ProbeModel along_plant(double c, double b) {
  const auto& u = planted()->weights().plant_direction;
  std::vector<double> w(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) w[i] = c * u[i];
  return testutil::hand_probe(w, b);
}

double frequency(const std::vector<double>& scores, double tau, std::size_t index, int draws, std::uint64_t seed) {
  Rng rng(seed);
  int hits = 0;
  for (int i = 0; i < draws; ++i) hits += resample(scores, tau, rng) == index ? 1 : 0;
  return static_cast<double>(hits) / draws;
}

}  // namespace

TEST_CASE("candidate_set examples") {
  CHECK(candidate_set(std::vector<double>{0.1, 0.9, 0.5}, 2) == std::vector<TokenId>{1, 2});
  CHECK(candidate_set(std::vector<double>{1, 1, 1, 1}, 3) == std::vector<TokenId>{0, 1, 2});
  CHECK(candidate_set(std::vector<double>{0, 2, 2, 1}, 2) == std::vector<TokenId>{1, 2});
  CHECK_THROWS_AS(candidate_set(std::vector<double>{1, 2}, 3), Error);

  Rng rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> logits(64);
    for (auto& x : logits) x = std::round(rng.normal() * 4) / 2;  // plenty of ties
    std::vector<TokenId> order(64);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](TokenId a, TokenId b) { return logits[a] > logits[b]; });
    order.resize(5);
    CHECK(candidate_set(logits, 5) == order);
  }
}

TEST_CASE("softmax conventions") {
  const auto p = softmax(std::vector<double>{1000.0, 999.0}, 1.0);
  CHECK(p[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
  CHECK(softmax(std::vector<double>{0.0, 3.0, 3.0}, 1e-7) == std::vector<double>{0, 1, 0});
  CHECK(testutil::error_kind([] { softmax(std::vector<double>{0.0, NAN}, 1.0); }) == ErrorKind::Numeric);
  CHECK(testutil::error_kind([] { softmax(std::vector<double>{0.0, INFINITY}, 1.0); }) == ErrorKind::Numeric);
  Rng rng(0);
  CHECK_THROWS_AS(resample(std::vector<double>{0.0}, 0.0, rng), Error);
}

TEST_CASE("equal scores resample evenly") {
  for (double tau : {0.1, 1.0, 7.0}) {
    CHECK(std::abs(frequency({0.0, 0.0}, tau, 0, 100000, 4) - 0.5) <= 0.01);
  }
}

TEST_CASE("a gap of 10 resamples within binomial bounds") {
  const double p = 1.0 / (1.0 + std::exp(-10.0));
  constexpr int n = 100000;
  const double f = frequency({10.0, 0.0}, 1.0, 0, n, 5);
  CHECK(std::abs(f - p) <= 3.0 * std::sqrt(p * (1 - p) / n) + 1.0 / n);
}

TEST_CASE("tiny tau is argmax") {
  Rng rng(6);
  for (int i = 0; i < 100; ++i) CHECK(resample(std::vector<double>{0.1, 0.3, -2.0}, 1e-9, rng) == 1);
}

TEST_CASE("resample frequencies are within 4/sqrt(N) total variation") {
  Rng gen(7);
  constexpr int n = 100000;
  for (int trial = 0; trial < 4; ++trial) {
    std::vector<double> s(5);
    for (auto& x : s) x = gen.normal() * 2;
    s[3] = s[1];
    std::vector<double> counts(5, 0.0);
    Rng rng(100 + trial);
    for (int i = 0; i < n; ++i) counts[resample(s, 0.8, rng)] += 1.0 / n;
    CHECK(oracle::total_variation(counts, oracle::softmax(s, 0.8)) <= 4.0 / std::sqrt(double(n)));
  }
}

TEST_CASE("defences off reproduces a plain sampling loop bit for bit") {
  const auto model = planted();
  const std::vector<TokenId> prompt = {4, 8, 15, 16, 23, 42};
  for (std::uint64_t seed : {0u, 1u, 99u}) {
    ToySession s(model);
    SteerConfig cfg;
    cfg.enable_probe = false;
    cfg.enable_msav = false;
    cfg.max_tokens = 40;
    cfg.seed = seed;
    cfg.base_temperature = 0.7;
    const auto got = generate(s, {}, cfg, prompt);

    ToySession ref(model);
    Rng rng(seed);
    auto out = ref.prefill(prompt);
    std::vector<TokenId> expect;
    for (int t = 0; t < 40; ++t) {
      const double top = *std::max_element(out.logits.begin(), out.logits.end());
      std::vector<double> p(out.logits.size());
      double total = 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) total += p[i] = std::exp((out.logits[i] - top) / 0.7);
      for (auto& x : p) x /= total;
      const double u = static_cast<double>(rng.next_u64() >> 11) * 0x1.0p-53;
      double c = 0.0;
      std::size_t pick = p.size() - 1;
      for (std::size_t i = 0; i < p.size(); ++i) {
        c += p[i];
        if (u < c) {
          pick = i;
          break;
        }
      }
      expect.push_back(static_cast<TokenId>(pick));
      out = ref.commit(static_cast<TokenId>(pick));
    }
    CHECK(got.tokens == expect);
    for (const auto& a : got.audit) CHECK(a.mode == StepMode::BaseSample);
  }
}

TEST_CASE("the single safe candidate scoring +8 wins at least 999 of 1000 runs") {
  const auto model = planted();
  // Find a prompt whose first top-5 holds exactly one planted-safe id.
  Rng rng(12);
  std::vector<TokenId> prompt;
  std::vector<TokenId> cands;
  for (int attempt = 0; attempt < 5000 && prompt.empty(); ++attempt) {
    auto p = planted_prompt(*model, Category::SD, rng);
    ToySession s(model);
    const auto c = candidate_set(s.prefill(p).logits, 5);
    const auto safe = std::count_if(c.begin(), c.end(), [&](TokenId t) { return model->plant_sign(t) > 0; });
    if (safe == 1) {
      prompt = p;
      cands = c;
    }
  }
  REQUIRE_FALSE(prompt.empty());

  ToySession s(model);
  s.prefill(prompt);
  const auto outs = s.lookahead(cands);
  const auto& u = model->weights().plant_direction;
  std::size_t safe_idx = 0;
  double safe_proj = 0.0, other_max = -INFINITY;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    double p = 0.0;
    for (std::size_t j = 0; j < u.size(); ++j) p += u[j] * outs[i].hidden[j];
    if (model->plant_sign(cands[i]) > 0) {
      safe_idx = i;
      safe_proj = p;
    } else {
      other_max = std::max(other_max, p);
    }
  }
  REQUIRE(safe_proj > other_max);
  // Safe candidate scores exactly +8; the best of the rest scores -2.
  const double c = 10.0 / (safe_proj - other_max);
  const auto probe = along_plant(c, 8.0 - c * safe_proj);

  SteerConfig cfg;
  cfg.enable_msav = false;
  cfg.step_budget = 1;
  cfg.max_tokens = 1;
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    ToySession run(model);
    cfg.seed = seed;
    const auto r = generate(run, {&probe, nullptr}, cfg, prompt);
    if (seed == 0) {
      CHECK(r.audit[0].safety_scores[safe_idx] == doctest::Approx(8.0));
      for (std::size_t i = 0; i < cands.size(); ++i) {
        if (i != safe_idx) CHECK(r.audit[0].safety_scores[i] <= -2.0 + 1e-9);
      }
    }
    hits += r.tokens[0] == cands[safe_idx] ? 1 : 0;
  }
  CHECK(hits >= 999);
}

TEST_CASE("mode discipline and candidate containment") {
  const auto model = planted();
  const auto probe = along_plant(1.0, 0.0);
  for (int budget : {0, 1, 3, 7}) {
    ToySession s(model);
    SteerConfig cfg;
    cfg.enable_msav = false;
    cfg.step_budget = budget;
    cfg.max_tokens = 10;
    cfg.seed = 5;
    const auto r = generate(s, {&probe, nullptr}, cfg, std::vector<TokenId>{1, 2, 3});
    REQUIRE(r.audit.size() == 10);
    for (const auto& a : r.audit) {
      CHECK((a.mode == StepMode::ProbeResample) == (a.step < budget));
      if (a.mode == StepMode::ProbeResample) {
        CHECK(a.candidate_ids.size() == 5);
        CHECK(std::find(a.candidate_ids.begin(), a.candidate_ids.end(), a.chosen_token_id) != a.candidate_ids.end());
        CHECK(std::accumulate(a.distribution.begin(), a.distribution.end(), 0.0) == doctest::Approx(1.0));
      } else {
        CHECK(a.candidate_ids.empty());
      }
    }
    for (std::size_t t = 0; t < r.steps.size(); ++t) {
      CHECK_NOTHROW(validate(r.steps[t], 32));
      CHECK(r.steps[t].chosen_token_id == r.tokens[t]);
    }
  }
}

TEST_CASE("probe resampling ignores logits unless blended") {
  const auto model = planted();
  const auto probe = along_plant(1.0, 0.0);
  SteerConfig cfg;
  cfg.enable_msav = false;
  cfg.tau = 1e-9;
  cfg.max_tokens = 1;
  ToySession a(model);
  const auto r = generate(a, {&probe, nullptr}, cfg, std::vector<TokenId>{9, 9, 9});
  const auto& sc = r.audit[0].safety_scores;
  const auto best = std::max_element(sc.begin(), sc.end()) - sc.begin();
  CHECK(r.tokens[0] == r.audit[0].candidate_ids[best]);

  cfg.blend_lambda = 1.0;
  ToySession b(model);
  const auto rb = generate(b, {&probe, nullptr}, cfg, std::vector<TokenId>{9, 9, 9});
  CHECK(rb.tokens[0] == rb.audit[0].candidate_ids[0]);  // top logit
}

TEST_CASE("end of sequence stops generation") {
  const auto model = planted();
  ToySession probe_run(model);
  SteerConfig cfg;
  cfg.enable_probe = false;
  cfg.enable_msav = false;
  cfg.max_tokens = 30;
  cfg.seed = 11;
  const auto free = generate(probe_run, {}, cfg, std::vector<TokenId>{7});
  cfg.eos_id = free.tokens[4];
  const auto first = std::find(free.tokens.begin(), free.tokens.end(), *cfg.eos_id) - free.tokens.begin();
  ToySession s(model);
  const auto stopped = generate(s, {}, cfg, std::vector<TokenId>{7});
  CHECK(stopped.stopped_on_eos);
  CHECK(stopped.tokens.size() == static_cast<std::size_t>(first + 1));
}

TEST_CASE("steering is applied once, before the first step") {
  const auto model = planted();
  const auto probe = along_plant(1.0, 100.0);  // harmless everywhere
  SteeringBundle b;
  b.mu_sd.assign(32, 0.0);
  b.mu_cb.assign(32, 0.0);
  b.mu_sd[0] = 1.0;
  b.mu = b.mu_sd;
  SteerConfig cfg;
  cfg.max_tokens = 3;
  ToySession s(model);
  auto r = generate(s, {&probe, &b}, cfg, std::vector<TokenId>{3, 4});
  CHECK_FALSE(r.steering_applied);

  const auto harsh = along_plant(1.0, -100.0);  // harmful everywhere
  ToySession s2(model);
  r = generate(s2, {&harsh, &b}, cfg, std::vector<TokenId>{3, 4});
  CHECK(r.steering_applied);
  CHECK(r.alpha == doctest::Approx(std::sqrt(std::inner_product(r.h0.begin(), r.h0.end(), r.h0.begin(), 0.0))));
}

TEST_CASE("configuration and precondition errors") {
  const auto model = planted();
  const auto probe = along_plant(1.0, 0.0);
  const std::vector<TokenId> prompt = {1};
  auto run = [&](SteerConfig cfg, Defenses d) {
    ToySession s(model);
    return generate(s, d, cfg, prompt);
  };
  CHECK(testutil::error_kind([&] { run({.k = 0}, {&probe, nullptr}); }) == ErrorKind::Usage);
  CHECK(testutil::error_kind([&] { run({.k = 129, .enable_msav = false}, {&probe, nullptr}); }) == ErrorKind::Usage);
  CHECK(testutil::error_kind([&] { run({}, {&probe, nullptr}); }) == ErrorKind::Usage);  // msav without bundle
  CHECK(testutil::error_kind([&] { run({.enable_msav = false}, {}); }) == ErrorKind::Usage);
  const auto small = testutil::hand_probe({1.0, 0.0}, 0.0);
  CHECK(testutil::error_kind([&] { run({.enable_msav = false}, {&small, nullptr}); }) == ErrorKind::Dimension);
  CHECK_THROWS_AS(run({.tau = 0.0}, {&probe, nullptr}), Error);
  CHECK_THROWS_AS(run({.blend_lambda = 2.0}, {&probe, nullptr}), Error);
}

TEST_CASE("replay divergence surfaces with its step index") {
  const auto model = planted();
  const auto probe = along_plant(1.0, 0.0);
  const std::vector<TokenId> prompt = {2, 7, 1, 8};
  ToySession s(model);
  SteerConfig cfg;
  cfg.enable_msav = false;
  cfg.max_tokens = 6;
  cfg.seed = 1;
  const auto rec = generate(s, {&probe, nullptr}, cfg, prompt);
  DecodeTrace t;
  t.query.id = "t";
  t.query.category = Category::CB;
  t.query.label = Label::Harmful;
  t.query.h0 = rec.h0;
  t.prompt_tokens = prompt;
  t.steps = rec.steps;

  // Same seed replays cleanly, including the base-sampled tail.
  ReplaySession ok(t, 128);
  const auto again = generate(ok, {&probe, nullptr}, cfg, prompt);
  CHECK(again.tokens == rec.tokens);

  // A probe preferring other candidates drives the replay off its path.
  const auto flipped = along_plant(-1.0, 0.0);
  cfg.tau = 1e-9;
  bool diverged = false;
  for (std::uint64_t seed = 0; seed < 20 && !diverged; ++seed) {
    cfg.seed = seed;
    ReplaySession bad(t, 128);
    try {
      generate(bad, {&flipped, nullptr}, cfg, prompt);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::ReplayDivergence);
      CHECK(std::string(e.what()).rfind("step ", 0) == 0);
      diverged = true;
    }
  }
  CHECK(diverged);
}

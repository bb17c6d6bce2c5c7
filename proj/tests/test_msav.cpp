#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "safesteer/fixtures.hpp"
#include "safesteer/msav.hpp"
#include "safesteer/rng.hpp"
#include "safesteer/vec.hpp"
#include "test_util.hpp"

using namespace safesteer;
using testutil::hand_probe;
using testutil::TempDir;

namespace {

QuerySample sample(Category c, HiddenVec h) {
  QuerySample s;
  s.id = "s";
  s.category = c;
  s.label = implied_label(c);
  s.h0 = std::move(h);
  return s;
}

SteeringBundle bundle_from(HiddenVec mu_sd, HiddenVec mu_cb) {
  SteeringBundle b;
  b.mu = vec::sub(mu_sd, mu_cb);
  b.mu_sd = std::move(mu_sd);
  b.mu_cb = std::move(mu_cb);
  b.sd_count = b.cb_count = 1;
  return b;
}

}  // namespace

TEST_CASE("single-point centroids") {
  const std::vector<QuerySample> corpus = {sample(Category::SD, {1, 0}), sample(Category::CB, {0, 1}),
                                           sample(Category::Benign, {5, 5})};
  const auto b = extract_msav(corpus);
  CHECK(b.mu_sd == HiddenVec{1, 0});
  CHECK(b.mu_cb == HiddenVec{0, 1});
  CHECK(b.mu == HiddenVec{1, -1});
  CHECK(b.sd_count == 1);
  CHECK(b.cb_count == 1);
}

TEST_CASE("identical SD and CB sets give a zero vector") {
  std::vector<QuerySample> corpus;
  Rng rng(2);
  for (int i = 0; i < 5; ++i) {
    HiddenVec h = {rng.normal(), rng.normal(), rng.normal()};
    corpus.push_back(sample(Category::SD, h));
    corpus.push_back(sample(Category::CB, h));
  }
  for (double x : extract_msav(corpus).mu) CHECK(x == 0.0);
}

TEST_CASE("missing categories are named") {
  const std::vector<QuerySample> no_cb = {sample(Category::SD, {1, 0}), sample(Category::TYPO, {0, 1})};
  CHECK(testutil::error_message([&] { extract_msav(no_cb); }).find("CB") != std::string::npos);
  const std::vector<QuerySample> no_sd = {sample(Category::CB, {1, 0})};
  CHECK(testutil::error_message([&] { extract_msav(no_sd); }).find("SD") != std::string::npos);
}

TEST_CASE("centroids match a compensated extended-precision sum") {
  Rng rng(3);
  std::vector<QuerySample> corpus;
  for (int i = 0; i < 100; ++i) {
    HiddenVec h(16);
    for (auto& x : h) x = rng.normal() * 1e3 + 1e6;
    corpus.push_back(sample(i % 2 ? Category::SD : Category::CB, h));
  }
  const auto b = extract_msav(corpus);
  std::vector<const HiddenVec*> sd, cb;
  for (const auto& s : corpus) (s.category == Category::SD ? sd : cb).push_back(&s.h0);
  const auto ref_sd = oracle::centroid(sd);
  const auto ref_cb = oracle::centroid(cb);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(std::abs(b.mu_sd[i] - ref_sd[i]) <= 1e-7);
    CHECK(std::abs(b.mu_cb[i] - ref_cb[i]) <= 1e-7);
  }
}

TEST_CASE("steering vanishes at the CB centroid") {
  const auto b = bundle_from({1, 1}, {0.5, -2});
  const auto p = hand_probe({0, 0}, -1.0);  // everything harmful
  const auto r = apply_steering(b, p, b.mu_cb);
  CHECK(r.applied);
  CHECK(r.alpha == 0.0);
  CHECK(r.h_out == b.mu_cb);
}

TEST_CASE("harmless inputs pass through bit-identical") {
  const auto b = bundle_from({1, 1}, {0.5, -2});
  const auto p = hand_probe({0, 0}, 1.0);  // everything harmless
  const HiddenVec h = {0.1, -0.0};
  const auto r = apply_steering(b, p, h);
  CHECK_FALSE(r.applied);
  CHECK(r.alpha == 0.0);
  CHECK(std::memcmp(r.h_out.data(), h.data(), sizeof(double) * 2) == 0);
}

TEST_CASE("hand evaluation h0=(2,0), mu_cb=0, mu=(0,1)") {
  const auto b = bundle_from({0, 1}, {0, 0});
  const auto p = hand_probe({-1, 0}, 0.0);
  const auto r = apply_steering(b, p, HiddenVec{2, 0});
  CHECK(r.applied);
  CHECK(r.alpha == 2.0);
  CHECK(r.h_out == HiddenVec{2, 2});

  const auto neg = apply_steering(b, p, HiddenVec{2, 0}, {.negate_mu = true});
  CHECK(neg.h_out == HiddenVec{2, -2});

  auto capped = b;
  capped.alpha_max = 0.5;
  const auto c = apply_steering(capped, p, HiddenVec{2, 0});
  CHECK(c.alpha == 0.5);
  CHECK(c.h_out == HiddenVec{2, 0.5});
}

TEST_CASE("gating sees the raw state") {
  // The steered state would be classified harmless; the gate must not care.
  const auto b = bundle_from({10, 0}, {0, 0});
  const auto p = hand_probe({1, 0}, -0.5);
  const auto r = apply_steering(b, p, HiddenVec{0.2, 0});
  CHECK(r.applied);
  CHECK(classify(p, r.h_out) == Label::Harmless);
}

TEST_CASE("direction, scale and gating properties on random pairs") {
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 2 + trial % 7;
    HiddenVec sd(d), cb(d), h0(d), w(d);
    for (std::size_t i = 0; i < d; ++i) {
      sd[i] = rng.normal() * 2;
      cb[i] = rng.normal() * 2;
      h0[i] = rng.normal() * 3;
      w[i] = rng.normal();
    }
    const auto b = bundle_from(sd, cb);
    const auto p = hand_probe(w, rng.normal());
    const auto r = apply_steering(b, p, h0);
    CHECK(r.applied == (classify(p, h0) == Label::Harmful));
    if (!r.applied) {
      CHECK(r.h_out == h0);
      continue;
    }
    const auto delta = vec::sub(r.h_out, h0);
    CHECK(std::abs(vec::norm(delta) - r.alpha * vec::norm(b.mu)) <= 1e-9 * std::max(1.0, vec::norm(delta)));
    const double cos = vec::dot(delta, b.mu) / (vec::norm(delta) * vec::norm(b.mu));
    CHECK(std::abs(cos - 1.0) <= 1e-9);
    CHECK(r.alpha == doctest::Approx(vec::norm(vec::sub(h0, cb))));
    // Pure function of its inputs.
    CHECK(apply_steering(b, p, h0).h_out == r.h_out);
  }
}

TEST_CASE("dimension mismatch") {
  const auto b = bundle_from({1, 1}, {0, 0});
  const auto p = hand_probe({1, 0}, 0.0);
  CHECK(testutil::error_kind([&] { apply_steering(b, p, HiddenVec{1, 2, 3}); }) == ErrorKind::Dimension);
  const auto p3 = hand_probe({1, 0, 0}, 0.0);
  CHECK(testutil::error_kind([&] { apply_steering(b, p3, HiddenVec{1, 2}); }) == ErrorKind::Dimension);
}

TEST_CASE("steering file round-trips and is validated") {
  TempDir dir;
  const auto corpus = gaussian_corpus(8, 2.0, {10, 10}, 1);
  auto b = extract_msav(corpus);
  write_steering(b, dir / "s.json");
  CHECK(read_steering(dir / "s.json") == b);
  b.alpha_max = 3.5;
  write_steering(b, dir / "s2.json");
  const auto back = read_steering(dir / "s2.json");
  CHECK(back == b);
  const auto j = read_json_file(dir / "s2.json");
  CHECK(j["source_counts"]["sd"] == 10);
  CHECK(j["dim"] == 8);

  Json bad = j;
  bad["mu"][0] = bad["mu"][0].get<double>() + 1e-6;
  CHECK(testutil::error_kind([&] { steering_from_json(bad); }) == ErrorKind::Validation);
}

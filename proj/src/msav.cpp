#include "safesteer/msav.hpp"

#include <cmath>

#include "safesteer/error.hpp"
#include "safesteer/vec.hpp"

namespace safesteer {

SteeringBundle extract_msav(std::span<const QuerySample> corpus) {
  validate_corpus(corpus);
  SteeringBundle b;
  for (const auto& s : corpus) {
    if (s.category != Category::SD && s.category != Category::CB) continue;
    HiddenVec& sum = s.category == Category::SD ? b.mu_sd : b.mu_cb;
    if (sum.empty()) sum.assign(s.dim(), 0.0);
    for (std::size_t i = 0; i < s.dim(); ++i) sum[i] += s.h0[i];
    (s.category == Category::SD ? b.sd_count : b.cb_count)++;
  }
  if (b.sd_count == 0) throw Error(ErrorKind::Validation, "extract_msav: corpus has no SD samples");
  if (b.cb_count == 0) throw Error(ErrorKind::Validation, "extract_msav: corpus has no CB samples");
  for (double& x : b.mu_sd) x /= static_cast<double>(b.sd_count);
  for (double& x : b.mu_cb) x /= static_cast<double>(b.cb_count);
  b.mu = vec::sub(b.mu_sd, b.mu_cb);
  return b;
}

SteeringResult apply_steering(const SteeringBundle& bundle, const ProbeModel& probe,
                              std::span<const double> h0, SteeringOptions options) {
  vec::require_same_dim(h0.size(), bundle.dim(), "apply_steering");
  vec::require_same_dim(h0.size(), probe.dim(), "apply_steering");
  SteeringResult r;
  r.h_out.assign(h0.begin(), h0.end());
  // Gate on the unsteered state: the probe was fitted on raw prefill states.
  if (classify(probe, h0) != Label::Harmful) return r;

  double alpha = vec::norm(vec::sub(h0, bundle.mu_cb));
  if (bundle.alpha_max) alpha = std::min(alpha, *bundle.alpha_max);
  const double sign = options.negate_mu ? -1.0 : 1.0;
  for (std::size_t i = 0; i < r.h_out.size(); ++i) r.h_out[i] += sign * alpha * bundle.mu[i];
  r.applied = true;
  r.alpha = alpha;
  return r;
}

void validate(const SteeringBundle& b) {
  if (b.mu.empty()) throw Error(ErrorKind::Validation, "steering: empty mu");
  vec::require_same_dim(b.mu_cb.size(), b.mu.size(), "steering mu_cb");
  vec::require_same_dim(b.mu_sd.size(), b.mu.size(), "steering mu_sd");
  if (!vec::all_finite(b.mu) || !vec::all_finite(b.mu_cb) || !vec::all_finite(b.mu_sd)) {
    throw Error(ErrorKind::Validation, "steering: non-finite entry");
  }
  for (std::size_t i = 0; i < b.mu.size(); ++i) {
    if (std::abs(b.mu[i] - (b.mu_sd[i] - b.mu_cb[i])) > 1e-9) {
      throw Error(ErrorKind::Validation, "steering: mu != mu_sd - mu_cb at index " + std::to_string(i));
    }
  }
  if (b.alpha_max && !(*b.alpha_max >= 0.0 && std::isfinite(*b.alpha_max))) {
    throw Error(ErrorKind::Validation, "steering: alpha_max must be finite and nonnegative");
  }
}

Json to_json(const SteeringBundle& b) {
  validate(b);
  Json j;
  j["dim"] = b.dim();
  j["mu"] = b.mu;
  j["mu_cb"] = b.mu_cb;
  j["mu_sd"] = b.mu_sd;
  j["source_counts"] = {{"sd", b.sd_count}, {"cb", b.cb_count}};
  if (b.alpha_max) j["alpha_max"] = *b.alpha_max;
  return j;
}

SteeringBundle steering_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Validation, "steering: expected a JSON object");
  SteeringBundle b;
  try {
    b.mu = doubles_from_json(j, "mu");
    b.mu_cb = doubles_from_json(j, "mu_cb");
    b.mu_sd = doubles_from_json(j, "mu_sd");
    const auto dim = j.at("dim").get<std::size_t>();
    vec::require_same_dim(dim, b.mu.size(), "steering dim field");
    const auto& counts = j.at("source_counts");
    b.sd_count = counts.at("sd").get<std::size_t>();
    b.cb_count = counts.at("cb").get<std::size_t>();
    if (auto it = j.find("alpha_max"); it != j.end() && !it->is_null()) b.alpha_max = it->get<double>();
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("steering: ") + e.what());
  }
  validate(b);
  return b;
}

SteeringBundle read_steering(const std::filesystem::path& path) {
  try {
    return steering_from_json(read_json_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) throw;
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void write_steering(const SteeringBundle& b, const std::filesystem::path& path) {
  write_json_file(to_json(b), path);
}

}  // namespace safesteer

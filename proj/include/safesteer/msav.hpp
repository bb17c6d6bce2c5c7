#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>

#include "safesteer/probe.hpp"
#include "safesteer/trace_model.hpp"

namespace safesteer {

// Modal semantic alignment vector: mu = mu_sd - mu_cb, the shift from the
// text-attack (CB) centroid to the image-attack (SD) centroid.
struct SteeringBundle {
  HiddenVec mu;
  HiddenVec mu_cb;
  HiddenVec mu_sd;
  std::size_t sd_count = 0;
  std::size_t cb_count = 0;
  // Optional cap on the adaptive strength; unbounded when empty.
  std::optional<double> alpha_max;

  std::size_t dim() const { return mu.size(); }
  bool operator==(const SteeringBundle&) const = default;
};

struct SteeringOptions {
  // Experiment switch: steer along -mu instead of mu.
  bool negate_mu = false;
};

struct SteeringResult {
  HiddenVec h_out;
  bool applied = false;
  double alpha = 0.0;
};

SteeringBundle extract_msav(std::span<const QuerySample> corpus);

// Gate on the probe's verdict for the raw h0. When HARMFUL:
//   alpha = |h0 - mu_cb|_2 (capped by alpha_max if set), h_out = h0 + alpha * mu.
// Otherwise h0 is returned untouched with alpha = 0.
SteeringResult apply_steering(const SteeringBundle& bundle, const ProbeModel& probe,
                              std::span<const double> h0, SteeringOptions options = {});

void validate(const SteeringBundle& bundle);

Json to_json(const SteeringBundle& bundle);
SteeringBundle steering_from_json(const Json& j);
SteeringBundle read_steering(const std::filesystem::path& path);
void write_steering(const SteeringBundle& bundle, const std::filesystem::path& path);

}  // namespace safesteer

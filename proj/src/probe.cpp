#include "safesteer/probe.hpp"

#include <cmath>
#include <limits>

#include "safesteer/error.hpp"
#include "safesteer/vec.hpp"

namespace safesteer {

namespace {

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void validate_config(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0 && c.learning_rate <= 10.0)) {
    throw Error(ErrorKind::Usage, "train_probe: learning_rate must be in (0, 10]");
  }
  if (c.epochs < 1 || c.epochs > 1'000'000) {
    throw Error(ErrorKind::Usage, "train_probe: epochs must be in [1, 1e6]");
  }
  if (!(c.l2 >= 0.0) || !std::isfinite(c.l2)) throw Error(ErrorKind::Usage, "train_probe: l2 must be >= 0");
  if (!(c.weight_harmful > 0.0) || !(c.weight_harmless > 0.0)) {
    throw Error(ErrorKind::Usage, "train_probe: class weights must be positive");
  }
}

double decision(const ProbeModel& probe, std::span<const double> v) {
  return vec::dot(probe.weights, v) + probe.bias;
}

}  // namespace

double logistic_loss(const LogisticProblem& p, std::span<const double> w, double b, double l2) {
  double total = 0.0;
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < p.features.size(); ++i) {
    const double z = vec::dot(w, p.features[i]) + b;
    total += p.sample_weights[i] * (softplus(z) - p.targets[i] * z);
    weight_sum += p.sample_weights[i];
  }
  return total / weight_sum + 0.5 * l2 * vec::dot(w, w);
}

std::vector<double> logistic_gradient(const LogisticProblem& p, std::span<const double> w, double b,
                                      double l2) {
  const std::size_t m = w.size();
  std::vector<double> grad(m + 1, 0.0);
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < p.features.size(); ++i) {
    const auto& v = p.features[i];
    const double residual = p.sample_weights[i] * (sigmoid(vec::dot(w, v) + b) - p.targets[i]);
    for (std::size_t j = 0; j < m; ++j) grad[j] += residual * v[j];
    grad[m] += residual;
    weight_sum += p.sample_weights[i];
  }
  for (double& g : grad) g /= weight_sum;
  for (std::size_t j = 0; j < m; ++j) grad[j] += l2 * w[j];
  return grad;
}

TrainResult train_probe(std::span<const QuerySample> samples, std::size_t num_components,
                        const TrainConfig& config) {
  validate_config(config);
  validate_corpus(samples);
  std::size_t harmful = 0;
  std::size_t harmless = 0;
  for (const auto& s : samples) (s.label == Label::Harmful ? harmful : harmless)++;
  if (harmful < 2 || harmless < 2) {
    throw Error(ErrorKind::Validation,
                "train_probe: need at least 2 samples of each label (harmful " +
                    std::to_string(harmful) + ", harmless " + std::to_string(harmless) + ")");
  }

  std::vector<HiddenVec> hs;
  hs.reserve(samples.size());
  for (const auto& s : samples) hs.push_back(s.h0);

  TrainResult result;
  ProbeModel& probe = result.probe;
  probe.pca = fit_pca(hs, num_components);
  probe.model = samples.front().model;

  LogisticProblem problem;
  for (const auto& s : samples) {
    problem.features.push_back(project(probe.pca, s.h0));
    const bool safe = s.label == Label::Harmless;
    problem.targets.push_back(safe ? 1.0 : 0.0);
    problem.sample_weights.push_back(safe ? config.weight_harmless : config.weight_harmful);
  }

  probe.weights.assign(num_components, 0.0);
  probe.bias = 0.0;
  result.loss_history.reserve(config.epochs);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto grad = logistic_gradient(problem, probe.weights, probe.bias, config.l2);
    for (std::size_t j = 0; j < num_components; ++j) probe.weights[j] -= config.learning_rate * grad[j];
    probe.bias -= config.learning_rate * grad[num_components];
    const double loss = logistic_loss(problem, probe.weights, probe.bias, config.l2);
    if (!std::isfinite(loss) || !vec::all_finite(probe.weights) || !std::isfinite(probe.bias)) {
      throw Error(ErrorKind::Numeric,
                  "train_probe: training diverged at epoch " + std::to_string(epoch + 1));
    }
    result.loss_history.push_back(loss);
  }
  probe.train_meta = TrainMeta{config, result.loss_history.back()};
  return result;
}

double score(const ProbeModel& probe, std::span<const double> h) {
  return decision(probe, project(probe.pca, h));
}

Label classify(const ProbeModel& probe, std::span<const double> h) {
  return score(probe, h) >= probe.threshold ? Label::Harmless : Label::Harmful;
}

void validate(const ProbeModel& probe) {
  validate(probe.pca);
  if (probe.weights.size() != probe.pca.num_components()) {
    throw Error(ErrorKind::Dimension, "probe: weights length does not equal num_components");
  }
  if (!vec::all_finite(probe.weights) || !std::isfinite(probe.bias) || std::isnan(probe.threshold)) {
    throw Error(ErrorKind::Validation, "probe: non-finite parameter");
  }
  if (probe.label_convention != kLabelConvention) {
    throw Error(ErrorKind::Validation, "probe: unsupported label_convention '" + probe.label_convention + "'");
  }
}

Json to_json(const ProbeModel& probe) {
  validate(probe);
  if (!std::isfinite(probe.threshold)) {
    throw Error(ErrorKind::Validation, "probe: threshold must be finite to be written");
  }
  Json j;
  j["dim"] = probe.dim();
  j["num_components"] = probe.pca.num_components();
  j["mean"] = probe.pca.mean;
  j["components"] = probe.pca.components;
  j["explained_variance"] = probe.pca.explained_variance;
  j["weights"] = probe.weights;
  j["bias"] = probe.bias;
  j["threshold"] = probe.threshold;
  j["label_convention"] = probe.label_convention;
  if (probe.train_meta) {
    const auto& c = probe.train_meta->config;
    Json meta;
    meta["lr"] = c.learning_rate;
    meta["epochs"] = c.epochs;
    meta["l2"] = c.l2;
    meta["seed"] = c.seed;
    meta["final_loss"] = probe.train_meta->final_loss;
    meta["class_weights"] = {{"harmful", c.weight_harmful}, {"harmless", c.weight_harmless}};
    j["train_meta"] = std::move(meta);
  }
  if (probe.model) j["model"] = *probe.model;
  return j;
}

ProbeModel probe_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorKind::Validation, "probe: expected a JSON object");
  auto number = [&](std::string_view key) {
    auto it = j.find(std::string(key));
    if (it == j.end() || !it->is_number()) {
      throw Error(ErrorKind::Validation, "probe: missing numeric field '" + std::string(key) + "'");
    }
    return it->get<double>();
  };
  ProbeModel p;
  try {
    p.pca.mean = doubles_from_json(j, "mean");
    p.pca.components = doubles_from_json(j, "components");
    p.pca.explained_variance = doubles_from_json(j, "explained_variance");
    p.weights = doubles_from_json(j, "weights");
    p.bias = number("bias");
    p.threshold = number("threshold");
    p.label_convention = j.at("label_convention").get<std::string>();
    const auto dim = j.at("dim").get<std::size_t>();
    const auto m = j.at("num_components").get<std::size_t>();
    if (dim != p.pca.mean.size() || m != p.pca.explained_variance.size()) {
      throw Error(ErrorKind::Dimension, "probe: dim/num_components disagree with array lengths");
    }
    if (auto it = j.find("train_meta"); it != j.end()) {
      TrainMeta meta;
      meta.config.learning_rate = it->at("lr").get<double>();
      meta.config.epochs = it->at("epochs").get<int>();
      meta.config.l2 = it->at("l2").get<double>();
      meta.config.seed = it->at("seed").get<std::uint64_t>();
      meta.final_loss = it->at("final_loss").get<double>();
      if (auto cw = it->find("class_weights"); cw != it->end()) {
        meta.config.weight_harmful = cw->at("harmful").get<double>();
        meta.config.weight_harmless = cw->at("harmless").get<double>();
      }
      p.train_meta = meta;
    }
    if (auto it = j.find("model"); it != j.end()) p.model = it->get<std::string>();
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Validation, std::string("probe: ") + e.what());
  }
  validate(p);
  return p;
}

ProbeModel read_probe(const std::filesystem::path& path) {
  try {
    return probe_from_json(read_json_file(path));
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Io) throw;
    throw Error(e.kind(), path.string() + ": " + e.what());
  }
}

void write_probe(const ProbeModel& probe, const std::filesystem::path& path) {
  write_json_file(to_json(probe), path);
}

}  // namespace safesteer

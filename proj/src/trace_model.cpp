#include "safesteer/trace_model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "safesteer/error.hpp"
#include "safesteer/vec.hpp"

namespace safesteer {

namespace {

constexpr std::string_view kSidecarDtype = "f32le";

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorKind::Validation, msg); }

void require_keys(const Json& j, std::initializer_list<std::string_view> allowed,
                  std::string_view what) {
  if (!j.is_object()) invalid(std::string(what) + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) invalid(std::string(what) + ": unknown field '" + key + "'");
  }
}

const Json& field(const Json& j, std::string_view name, std::string_view what) {
  auto it = j.find(std::string(name));
  if (it == j.end()) invalid(std::string(what) + ": missing field '" + std::string(name) + "'");
  return *it;
}

std::string string_field(const Json& j, std::string_view name, std::string_view what) {
  const Json& v = field(j, name, what);
  if (!v.is_string()) invalid(std::string(what) + ": field '" + std::string(name) + "' must be a string");
  return v.get<std::string>();
}

std::optional<std::string> optional_string(const Json& j, std::string_view name,
                                           std::string_view what) {
  auto it = j.find(std::string(name));
  if (it == j.end()) return std::nullopt;
  if (!it->is_string()) invalid(std::string(what) + ": field '" + std::string(name) + "' must be a string");
  return it->get<std::string>();
}

std::int64_t int_field(const Json& j, std::string_view name, std::string_view what) {
  const Json& v = field(j, name, what);
  if (!v.is_number_integer()) invalid(std::string(what) + ": field '" + std::string(name) + "' must be an integer");
  return v.get<std::int64_t>();
}

double as_double(const Json& v, std::string_view what) {
  if (!v.is_number()) invalid(std::string(what) + ": expected a number");
  return v.get<double>();
}

std::vector<TokenId> token_array(const Json& v, std::string_view what) {
  if (!v.is_array()) invalid(std::string(what) + ": expected an array of token ids");
  std::vector<TokenId> out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number_integer()) invalid(std::string(what) + ": token ids must be integers");
    out.push_back(static_cast<TokenId>(x.get<std::int64_t>()));
  }
  return out;
}

Json double_array(std::span<const double> xs) {
  Json arr = Json::array();
  for (double x : xs) arr.push_back(x);
  return arr;
}

void require_finite(std::span<const double> xs, const std::string& what) {
  if (!vec::all_finite(xs)) invalid(what + ": non-finite entry");
}

// Sample JSON without h0, shared by the inline and sidecar encodings.
Json sample_header_json(const QuerySample& s) {
  Json j;
  j["id"] = s.id;
  j["label"] = std::string(to_string(s.label));
  j["category"] = std::string(to_string(s.category));
  j["layer_index"] = s.layer_index;
  j["dim"] = s.dim();
  return j;
}

void append_optionals(Json& j, const QuerySample& s) {
  if (s.text) j["text"] = *s.text;
  if (s.extraction_point) j["extraction_point"] = *s.extraction_point;
  if (s.model) j["model"] = *s.model;
}

QuerySample sample_from_json_impl(const Json& j, const std::vector<float>* sidecar) {
  constexpr std::string_view what = "sample";
  require_keys(j,
               {"id", "label", "category", "layer_index", "dim", "h0", "h0_offset", "text",
                "extraction_point", "model"},
               what);
  QuerySample s;
  s.id = string_field(j, "id", what);
  s.label = parse_label(string_field(j, "label", what));
  s.category = parse_category(string_field(j, "category", what));
  const auto layer = int_field(j, "layer_index", what);
  if (layer < 0) invalid("sample: layer_index must be nonnegative");
  s.layer_index = static_cast<int>(layer);
  const auto dim = int_field(j, "dim", what);
  if (dim <= 0) invalid("sample: dim must be positive");

  if (sidecar != nullptr) {
    if (j.contains("h0")) invalid("sample: inline h0 not allowed in a sidecar corpus");
    const auto offset = int_field(j, "h0_offset", what);
    if (offset < 0 || static_cast<std::size_t>(offset + dim) > sidecar->size()) {
      invalid("sample: h0_offset out of sidecar range");
    }
    s.h0.assign(sidecar->begin() + offset, sidecar->begin() + offset + dim);
  } else {
    if (j.contains("h0_offset")) invalid("sample: h0_offset requires a sidecar header");
    const Json& h0 = field(j, "h0", what);
    if (!h0.is_array()) invalid("sample: h0 must be an array");
    s.h0.reserve(h0.size());
    for (const auto& x : h0) s.h0.push_back(as_double(x, "sample.h0"));
  }
  if (s.h0.size() != static_cast<std::size_t>(dim)) {
    invalid("sample: dim " + std::to_string(dim) + " does not match h0 length " +
            std::to_string(s.h0.size()));
  }
  s.text = optional_string(j, "text", what);
  s.extraction_point = optional_string(j, "extraction_point", what);
  s.model = optional_string(j, "model", what);
  validate(s);
  return s;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open for writing: " + path.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open for reading: " + path.string());
  return in;
}

Json parse_line(const std::string& line, const std::filesystem::path& path, std::size_t lineno) {
  try {
    return Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::Validation,
                path.string() + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
  }
}

std::string with_line(const std::filesystem::path& path, std::size_t lineno, const Error& e) {
  return path.string() + ":" + std::to_string(lineno) + ": " + e.what();
}

}  // namespace

std::string_view to_string(Label label) {
  return label == Label::Harmful ? "HARMFUL" : "HARMLESS";
}

std::string_view to_string(Category category) {
  switch (category) {
    case Category::Benign: return "BENIGN";
    case Category::CB: return "CB";
    case Category::SD: return "SD";
    case Category::TYPO: return "TYPO";
    case Category::SDTYPO: return "SDTYPO";
  }
  return "?";
}

Label parse_label(std::string_view s) {
  if (s == "HARMFUL") return Label::Harmful;
  if (s == "HARMLESS") return Label::Harmless;
  invalid("unknown label '" + std::string(s) + "'");
}

Category parse_category(std::string_view s) {
  for (Category c : kAllCategories) {
    if (to_string(c) == s) return c;
  }
  invalid("unknown category '" + std::string(s) + "'");
}

Label implied_label(Category category) {
  return category == Category::Benign ? Label::Harmless : Label::Harmful;
}

void validate(const QuerySample& s) {
  if (s.h0.empty()) invalid("sample '" + s.id + "': empty h0");
  require_finite(s.h0, "sample '" + s.id + "'");
  if (s.layer_index < 0) invalid("sample '" + s.id + "': negative layer_index");
  if (implied_label(s.category) != s.label) {
    invalid("sample '" + s.id + "': category " + std::string(to_string(s.category)) +
            " is inconsistent with label " + std::string(to_string(s.label)));
  }
}

void validate(const StepRecord& r, std::size_t dim) {
  const std::string where = "step " + std::to_string(r.step);
  const std::size_t k = r.candidate_token_ids.size();
  if (k == 0) invalid(where + ": empty candidate set");
  if (r.candidate_logits.size() != k || r.candidate_hiddens.size() != k) {
    invalid(where + ": candidate ids/logits/hiddens have different lengths");
  }
  if (r.step < 0) invalid(where + ": negative step index");
  std::set<TokenId> seen;
  for (TokenId id : r.candidate_token_ids) {
    if (id < 0) invalid(where + ": negative token id");
    if (!seen.insert(id).second) invalid(where + ": duplicate candidate id " + std::to_string(id));
  }
  require_finite(r.candidate_logits, where + " logits");
  for (const auto& h : r.candidate_hiddens) {
    if (h.size() != dim) {
      throw Error(ErrorKind::Dimension, where + ": candidate hidden has dim " +
                                            std::to_string(h.size()) + ", expected " +
                                            std::to_string(dim));
    }
    require_finite(h, where + " hidden");
  }
  if (r.chosen_index < 0 || static_cast<std::size_t>(r.chosen_index) >= k) {
    invalid(where + ": chosen_index out of range");
  }
  if (r.candidate_token_ids[r.chosen_index] != r.chosen_token_id) {
    invalid(where + ": chosen_token_id " + std::to_string(r.chosen_token_id) +
            " is not candidate_token_ids[chosen_index]");
  }
}

void validate(const DecodeTrace& t) {
  validate(t.query);
  int prev = -1;
  for (std::size_t i = 0; i < t.steps.size(); ++i) {
    const auto& r = t.steps[i];
    if (i == 0 && r.step != 0) invalid("trace: steps must start at index 0");
    if (r.step <= prev) invalid("trace: step indices must be strictly increasing");
    prev = r.step;
    validate(r, t.query.dim());
  }
  if (t.prompt_tokens) {
    if (t.prompt_tokens->empty()) invalid("trace: empty prompt_tokens");
    for (TokenId id : *t.prompt_tokens) {
      if (id < 0) invalid("trace: negative prompt token id");
    }
  }
}

void validate_corpus(std::span<const QuerySample> samples) {
  if (samples.empty()) return;
  const std::size_t dim = samples.front().dim();
  const auto& model = samples.front().model;
  for (const auto& s : samples) {
    validate(s);
    if (s.dim() != dim) {
      throw Error(ErrorKind::Dimension, "corpus: sample '" + s.id + "' has dim " +
                                            std::to_string(s.dim()) + ", expected " +
                                            std::to_string(dim));
    }
    if (s.model != model) invalid("corpus: sample '" + s.id + "' comes from a different model");
  }
}

Json to_json(const QuerySample& s) {
  Json j = sample_header_json(s);
  j["h0"] = double_array(s.h0);
  append_optionals(j, s);
  return j;
}

Json to_json(const StepRecord& r) {
  Json j;
  j["step"] = r.step;
  j["candidate_token_ids"] = r.candidate_token_ids;
  j["candidate_logits"] = double_array(r.candidate_logits);
  Json hiddens = Json::array();
  for (const auto& h : r.candidate_hiddens) hiddens.push_back(double_array(h));
  j["candidate_hiddens"] = std::move(hiddens);
  j["chosen_token_id"] = r.chosen_token_id;
  j["chosen_index"] = r.chosen_index;
  return j;
}

Json to_json(const DecodeTrace& t) {
  Json j;
  j["query"] = to_json(t.query);
  if (t.prompt_tokens) j["prompt_tokens"] = *t.prompt_tokens;
  Json steps = Json::array();
  for (const auto& r : t.steps) steps.push_back(to_json(r));
  j["steps"] = std::move(steps);
  if (t.final_text) j["final_text"] = *t.final_text;
  return j;
}

QuerySample sample_from_json(const Json& j) { return sample_from_json_impl(j, nullptr); }

StepRecord step_from_json(const Json& j) {
  constexpr std::string_view what = "step";
  require_keys(j,
               {"step", "candidate_token_ids", "candidate_logits", "candidate_hiddens",
                "chosen_token_id", "chosen_index"},
               what);
  StepRecord r;
  r.step = static_cast<int>(int_field(j, "step", what));
  r.candidate_token_ids = token_array(field(j, "candidate_token_ids", what), "step.candidate_token_ids");
  const Json& logits = field(j, "candidate_logits", what);
  if (!logits.is_array()) invalid("step: candidate_logits must be an array");
  for (const auto& x : logits) r.candidate_logits.push_back(as_double(x, "step.candidate_logits"));
  const Json& hiddens = field(j, "candidate_hiddens", what);
  if (!hiddens.is_array()) invalid("step: candidate_hiddens must be an array");
  for (const auto& h : hiddens) {
    if (!h.is_array()) invalid("step: each candidate hidden must be an array");
    HiddenVec v;
    v.reserve(h.size());
    for (const auto& x : h) v.push_back(as_double(x, "step.candidate_hiddens"));
    r.candidate_hiddens.push_back(std::move(v));
  }
  r.chosen_token_id = static_cast<TokenId>(int_field(j, "chosen_token_id", what));
  r.chosen_index = static_cast<int>(int_field(j, "chosen_index", what));
  return r;
}

DecodeTrace trace_from_json(const Json& j) {
  constexpr std::string_view what = "trace";
  require_keys(j, {"query", "prompt_tokens", "steps", "final_text"}, what);
  DecodeTrace t;
  t.query = sample_from_json(field(j, "query", what));
  if (auto it = j.find("prompt_tokens"); it != j.end()) {
    t.prompt_tokens = token_array(*it, "trace.prompt_tokens");
  }
  const Json& steps = field(j, "steps", what);
  if (!steps.is_array()) invalid("trace: steps must be an array");
  for (const auto& s : steps) t.steps.push_back(step_from_json(s));
  t.final_text = optional_string(j, "final_text", what);
  validate(t);
  return t;
}

std::vector<QuerySample> read_corpus(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<QuerySample> samples;
  std::optional<std::vector<float>> sidecar;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const Json j = parse_line(line, path, lineno);
    try {
      if (lineno == 1 && j.is_object() && j.contains("sidecar")) {
        require_keys(j, {"sidecar", "dtype", "count"}, "sidecar header");
        if (string_field(j, "dtype", "sidecar header") != kSidecarDtype) {
          invalid("sidecar header: unsupported dtype");
        }
        const auto count = int_field(j, "count", "sidecar header");
        const auto sc_path = path.parent_path() / string_field(j, "sidecar", "sidecar header");
        auto sc = open_in(sc_path);
        std::vector<char> bytes((std::istreambuf_iterator<char>(sc)), std::istreambuf_iterator<char>());
        if (count < 0 || bytes.size() != static_cast<std::size_t>(count) * 4) {
          invalid("sidecar " + sc_path.string() + ": size does not match header count");
        }
        std::vector<float> values(static_cast<std::size_t>(count));
        for (std::size_t i = 0; i < values.size(); ++i) {
          std::uint32_t bits = 0;
          for (int b = 3; b >= 0; --b) {
            bits = (bits << 8) | static_cast<unsigned char>(bytes[i * 4 + b]);
          }
          values[i] = std::bit_cast<float>(bits);
        }
        sidecar = std::move(values);
        continue;
      }
      samples.push_back(sample_from_json_impl(j, sidecar ? &*sidecar : nullptr));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::Io) throw;
      throw Error(e.kind(), with_line(path, lineno, e));
    }
  }
  validate_corpus(samples);
  return samples;
}

void write_corpus(std::span<const QuerySample> samples, const std::filesystem::path& path,
                  CorpusWriteOptions options) {
  if (samples.empty()) invalid("write_corpus: empty corpus");
  validate_corpus(samples);

  if (!options.sidecar) {
    auto out = open_out(path);
    for (const auto& s : samples) out << to_json(s).dump() << '\n';
    if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
    return;
  }

  std::vector<float> values;
  values.reserve(samples.size() * samples.front().dim());
  for (const auto& s : samples) {
    for (double x : s.h0) {
      const float f = static_cast<float>(x);
      if (static_cast<double>(f) != x) {
        invalid("write_corpus: sample '" + s.id + "' holds a value not representable as f32");
      }
      values.push_back(f);
    }
  }
  auto sc_path = path;
  sc_path += ".f32";
  {
    auto sc = open_out(sc_path);
    for (float f : values) {
      const auto bits = std::bit_cast<std::uint32_t>(f);
      const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                             static_cast<char>((bits >> 16) & 0xff),
                             static_cast<char>((bits >> 24) & 0xff)};
      sc.write(bytes, 4);
    }
    if (!sc) throw Error(ErrorKind::Io, "write failed: " + sc_path.string());
  }
  auto out = open_out(path);
  Json header;
  header["sidecar"] = sc_path.filename().string();
  header["dtype"] = kSidecarDtype;
  header["count"] = values.size();
  out << header.dump() << '\n';
  std::size_t offset = 0;
  for (const auto& s : samples) {
    Json j = sample_header_json(s);
    j["h0_offset"] = offset;
    append_optionals(j, s);
    offset += s.dim();
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

std::vector<DecodeTrace> read_traces(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<DecodeTrace> traces;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const Json j = parse_line(line, path, lineno);
    try {
      traces.push_back(trace_from_json(j));
    } catch (const Error& e) {
      throw Error(e.kind(), with_line(path, lineno, e));
    }
  }
  return traces;
}

void write_traces(std::span<const DecodeTrace> traces, const std::filesystem::path& path) {
  for (const auto& t : traces) validate(t);
  auto out = open_out(path);
  for (const auto& t : traces) out << to_json(t).dump() << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

Json read_json_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorKind::Validation, path.string() + ": malformed JSON: " + e.what());
  }
}

void write_json_file(const Json& j, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path.string());
}

std::vector<double> doubles_from_json(const Json& j, std::string_view name) {
  auto it = j.find(std::string(name));
  if (it == j.end()) invalid("missing field '" + std::string(name) + "'");
  if (!it->is_array()) invalid("field '" + std::string(name) + "' must be an array");
  std::vector<double> out;
  out.reserve(it->size());
  for (const auto& x : *it) out.push_back(as_double(x, name));
  return out;
}

}  // namespace safesteer

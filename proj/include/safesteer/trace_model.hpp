#pragma once

// Canonical records shared by every module and by the external trace
// exporter: prefill samples, per-step candidate records and decode traces,
// plus their line-delimited JSON file formats (see docs/formats.md).

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace safesteer {

using Json = nlohmann::ordered_json;

// Final decoder layer, last token position.
using HiddenVec = std::vector<double>;
using TokenId = std::int32_t;

enum class Label { Harmful, Harmless };

// BENIGN is the only harmless tag; CB is the text-attack anchor.
enum class Category { Benign, CB, SD, TYPO, SDTYPO };

inline constexpr Category kAllCategories[] = {Category::Benign, Category::CB, Category::SD,
                                              Category::TYPO, Category::SDTYPO};

std::string_view to_string(Label label);
std::string_view to_string(Category category);
Label parse_label(std::string_view s);
Category parse_category(std::string_view s);
Label implied_label(Category category);

struct QuerySample {
  std::string id;
  Label label = Label::Harmless;
  Category category = Category::Benign;
  HiddenVec h0;
  int layer_index = 0;
  std::optional<std::string> text;
  // Where in the final block the state was captured (e.g. "post_final_norm").
  std::optional<std::string> extraction_point;
  // Source model identifier; corpora never mix models.
  std::optional<std::string> model;

  std::size_t dim() const { return h0.size(); }
  bool operator==(const QuerySample&) const = default;
};

struct StepRecord {
  int step = 0;
  std::vector<TokenId> candidate_token_ids;
  std::vector<double> candidate_logits;
  std::vector<HiddenVec> candidate_hiddens;
  TokenId chosen_token_id = 0;
  int chosen_index = 0;

  std::size_t width() const { return candidate_token_ids.size(); }
  bool operator==(const StepRecord&) const = default;
};

struct DecodeTrace {
  QuerySample query;
  // Needed by the replay backend to validate prefill.
  std::optional<std::vector<TokenId>> prompt_tokens;
  std::vector<StepRecord> steps;
  std::optional<std::string> final_text;

  bool operator==(const DecodeTrace&) const = default;
};

// Invariant checks; throw Error(Validation/Dimension) naming the violation.
void validate(const QuerySample& sample);
void validate(const StepRecord& record, std::size_t dim);
void validate(const DecodeTrace& trace);
// Homogeneous dimension and no cross-model mixing.
void validate_corpus(std::span<const QuerySample> samples);

Json to_json(const QuerySample& sample);
Json to_json(const StepRecord& record);
Json to_json(const DecodeTrace& trace);
QuerySample sample_from_json(const Json& j);
StepRecord step_from_json(const Json& j);
DecodeTrace trace_from_json(const Json& j);

// Raw little-endian f32 sidecar for large corpora. Only values that are
// exactly representable as f32 may be written this way.
struct CorpusWriteOptions {
  bool sidecar = false;
};

std::vector<QuerySample> read_corpus(const std::filesystem::path& path);
void write_corpus(std::span<const QuerySample> samples, const std::filesystem::path& path,
                  CorpusWriteOptions options = {});

std::vector<DecodeTrace> read_traces(const std::filesystem::path& path);
void write_traces(std::span<const DecodeTrace> traces, const std::filesystem::path& path);

// Shared helpers for the single-document JSON files (probe, steering, toy config).
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const Json& j, const std::filesystem::path& path);
std::vector<double> doubles_from_json(const Json& j, std::string_view field);

}  // namespace safesteer

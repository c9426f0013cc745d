#pragma once

#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "convocache/engine.hpp"

namespace convocache {

enum class Split { train, test };

struct Conversation {
  std::vector<Utterance> utterances;
  Split split = Split::train;
};

/// One conversation per line, utterances separated by "__eou__". Blank lines
/// are skipped; empty segments (e.g. after a terminal separator) are dropped.
std::vector<Conversation> parse_corpus(std::istream& in, Split split);
std::vector<Conversation> parse_corpus(const std::filesystem::path& path, Split split);

/// (U_1..U_j) -> U_{j+1} for j = 1..m-1.
std::vector<PromptResponsePair> extract_pairs(const Conversation& conversation);
std::vector<PromptResponsePair> extract_pairs(std::span<const Conversation> conversations);

/// Appends one seeded entry per pair. Returns the number appended.
std::size_t seed(std::span<const PromptResponsePair> pairs, double lambda, CacheStore& store, Encoder& encoder);

/// Keeps the first ceil(split * W) whitespace tokens of the last utterance.
DialogueHistory truncate_last_utterance(const DialogueHistory& history, double split);

/// Fixed component latencies (ms) used instead of measured means.
struct LatencyModel {
  double encode_ms = 0.0;
  double search_ms = 0.0;
  double eval_ms = 0.0;  ///< per evaluated candidate
};

struct ReplayOptions {
  bool frozen_cache = true;
  std::size_t threads = 1;  ///< >1 only honoured with a frozen cache
  GatePolicy policy = GatePolicy::first_pass;
  std::optional<LatencyModel> latency_model;
};

struct RequestLog {
  std::size_t index = 0;
  std::vector<std::string> history;
  std::string reference_response;
  EngineResponse response;
};

struct ComponentStats {
  double mean = 0.0;
  double stddev = 0.0;
  double max = 0.0;
};

struct RankReport {
  double lambda = 0.0;
  std::size_t k = 0;
  double threshold = 0.0;
  std::string encoder_id;
  std::string evaluator_id;
  bool frozen_cache = true;

  std::size_t total_requests = 0;
  std::vector<std::size_t> rank_counts;  ///< rank_counts[r-1] for r = 1..k
  std::size_t miss_count = 0;
  RankDistribution proportions;

  /// Measured stats (ms). eval is per evaluated candidate.
  ComponentStats encode, search, eval_per_candidate, eval_per_request, generate, total;
  double measured_average_latency_ms = 0.0;
  std::optional<LatencyModel> latency_model;
  std::optional<double> modelled_average_latency_ms;

  double hit_rate() const noexcept { return 1.0 - proportions.miss; }
  double average_latency_ms() const noexcept {
    return modelled_average_latency_ms.value_or(measured_average_latency_ms);
  }
};

struct ReplayResult {
  RankReport report;
  std::vector<RequestLog> log;
};

/// Responds to every test pair's history through the engine and tallies
/// rank / miss proportions. On a non-frozen cache, misses append in order.
ReplayResult replay(std::span<const PromptResponsePair> test_pairs, const EngineConfig& config, CacheStore& store,
                    Encoder& encoder, Evaluator& evaluator, Generator& generator, const ReplayOptions& options = {});

struct SplitReport {
  double split = 1.0;
  ReplayResult result;
};

/// Replays with the last utterance truncated to each split, for encoding and
/// evaluation alike. Every split starts from the same store state.
std::vector<SplitReport> prefetch_replay(std::span<const PromptResponsePair> test_pairs, const EngineConfig& config,
                                         std::span<const double> splits, CacheStore& store, Encoder& encoder,
                                         Evaluator& evaluator, Generator& generator,
                                         const ReplayOptions& options = {});

struct SweepRow {
  double lambda = 0.0;
  ReplayResult result;
};

/// Reseeds a fresh store per lambda and replays the test pairs.
std::vector<SweepRow> lambda_sweep(std::span<const PromptResponsePair> train_pairs,
                                   std::span<const PromptResponsePair> test_pairs, const EngineConfig& config,
                                   std::span<const double> lambdas, Encoder& encoder, Evaluator& evaluator,
                                   Generator& generator, const ReplayOptions& options = {});

inline constexpr double kDefaultSweepLambdas[] = {0.25, 0.5, 0.75, 1.0};
inline constexpr double kPrefetchSplits[] = {1.0, 0.9, 0.8, 0.7, 0.6};

/// Report as JSON. Wall-clock fields are omitted when include_timings is false;
/// a latency model, being an input, is always kept.
nlohmann::ordered_json to_json(const RankReport& report, bool include_timings = true);
nlohmann::ordered_json to_json(const EngineResponse& response, bool include_timings = true);
nlohmann::ordered_json to_json(const RequestLog& entry, bool include_timings = true);

/// Human-readable one-report table.
std::string format_table(const RankReport& report);
std::string format_prefetch_table(std::span<const SplitReport> reports);

std::string history_hash(std::span<const std::string> history);

/// Newline-delimited JSON, one object per request.
void write_log(std::ostream& out, std::span<const RequestLog> log, bool include_timings = true);

}  // namespace convocache

#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "convocache/coherence.hpp"
#include "convocache/embedding.hpp"
#include "convocache/index.hpp"
#include "convocache/types.hpp"

namespace convocache {

/// Fresh response generator used on a cache miss.
class Generator {
 public:
  virtual ~Generator() = default;
  virtual const std::string& id() const noexcept = 0;
  virtual std::string produce(const DialogueHistory& history) = 0;
  virtual bool thread_safe() const noexcept { return false; }
};

/// Deterministic generator. The template may contain "{last}" (the last
/// utterance) and "{n}" (history length).
class EchoGenerator final : public Generator {
 public:
  explicit EchoGenerator(std::string templ = "{last}");

  const std::string& id() const noexcept override { return id_; }
  std::string produce(const DialogueHistory& history) override;
  bool thread_safe() const noexcept override { return true; }

 private:
  std::string id_ = "echo";
  std::string template_;
};

/// Milliseconds, wall clock. total_ms covers the whole respond call.
struct TimingBreakdown {
  double encode_ms = 0.0;
  double search_ms = 0.0;
  double eval_ms = 0.0;
  double generate_ms = 0.0;
  double total_ms = 0.0;
};

enum class Outcome { hit, miss };

std::string_view to_string(Outcome outcome) noexcept;

struct CandidateInfo {
  std::size_t rank = 0;
  std::uint64_t entry_id = 0;
  double similarity = 0.0;
  std::optional<double> coherence;  // absent when the gate stopped before this rank
};

struct EngineResponse {
  std::string response_text;
  Outcome outcome = Outcome::miss;
  std::optional<std::size_t> candidate_rank;
  std::optional<CoherenceScore> coherence;
  std::optional<double> similarity;
  std::size_t evals_used = 0;
  bool filler_recommended = true;
  TimingBreakdown timings;
  std::vector<CandidateInfo> candidates;
  std::optional<std::uint64_t> appended_id;
};

struct RespondOptions {
  std::optional<std::size_t> k;
  std::optional<double> threshold;
};

struct EngineOptions {
  GatePolicy policy = GatePolicy::first_pass;
  bool append_on_miss = true;  ///< false = frozen cache
};

/// Retrieval-then-gate response cache. Shareable across threads; components
/// that are not thread-safe are serialized internally.
class CacheEngine {
 public:
  CacheEngine(EngineConfig config, std::shared_ptr<CacheStore> store, std::shared_ptr<Encoder> encoder,
              std::shared_ptr<Evaluator> evaluator, std::shared_ptr<Generator> generator,
              EngineOptions options = {});

  EngineResponse respond(const DialogueHistory& history, const RespondOptions& overrides = {});

  const EngineConfig& config() const noexcept { return config_; }
  const EngineOptions& options() const noexcept { return options_; }
  CacheStore& store() noexcept { return *store_; }
  const CacheStore& store() const noexcept { return *store_; }

 private:
  Embedding conversation_embedding(const DialogueHistory& history);
  GateOutcome run_gate(const DialogueHistory& history, std::span<const std::string> candidates, double threshold);
  std::string generate(const DialogueHistory& history);

  EngineConfig config_;
  std::shared_ptr<CacheStore> store_;
  std::shared_ptr<Encoder> encoder_;
  std::shared_ptr<Evaluator> evaluator_;
  std::shared_ptr<Generator> generator_;
  EngineOptions options_;
  std::mutex encoder_mutex_;
  std::mutex evaluator_mutex_;
  std::mutex generator_mutex_;
};

/// Single-function form of the engine's request path.
EngineResponse respond(const DialogueHistory& history, const EngineConfig& config, CacheStore& store,
                       Encoder& encoder, Evaluator& evaluator, Generator& generator,
                       const EngineOptions& options = {});

/// Distribution of gate outcomes: proportions[r-1] = P(rank r), r = 1..k.
struct RankDistribution {
  std::vector<double> ranks;
  double miss = 0.0;
};

/// Expected per-request latency when every evaluation costs eval_ms and a miss
/// costs k evaluations: encode + search + eval * (sum_r r P(r) + k P(miss)).
/// Proportions must sum to 1 within `sum_tolerance`.
double expected_latency(const RankDistribution& distribution, double encode_ms, double search_ms, double eval_ms,
                        double sum_tolerance = 1e-6);

}  // namespace convocache

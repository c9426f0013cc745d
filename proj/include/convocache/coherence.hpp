#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "convocache/embedding.hpp"
#include "convocache/types.hpp"

namespace convocache {

inline constexpr std::string_view kDefaultCoherenceQuestion =
    "question: Is this a coherent response given the dialogue history?";

/// A coherence score, guaranteed to lie in [0, 1].
class CoherenceScore {
 public:
  explicit CoherenceScore(double value);
  double value() const noexcept { return value_; }
  friend auto operator<=>(const CoherenceScore&, const CoherenceScore&) = default;

 private:
  double value_;
};

struct EvaluatorDescriptor {
  std::string id;
  std::string question{kDefaultCoherenceQuestion};

  explicit EvaluatorDescriptor(std::string id_, std::string question_ = std::string(kDefaultCoherenceQuestion));
};

struct EvaluationItem {
  const DialogueHistory* history;
  std::string_view response;
};

/// Reference-free response evaluator. The batch interface lets remote
/// implementations amortize a round trip; the gate still submits one item
/// at a time unless re-ranking is requested.
class Evaluator {
 public:
  virtual ~Evaluator() = default;

  virtual const EvaluatorDescriptor& descriptor() const noexcept = 0;
  /// Raw scores, one per item, in order. Range checking happens in `evaluate`.
  virtual std::vector<double> score_batch(std::span<const EvaluationItem> items) = 0;
  virtual bool thread_safe() const noexcept { return false; }

  const std::string& id() const noexcept { return descriptor().id; }
};

/// Scores one (history, response) pair. Throws ScoreOutOfRange when the
/// evaluator returns a value outside [0, 1].
CoherenceScore evaluate(const DialogueHistory& history, std::string_view response, Evaluator& evaluator);

std::vector<CoherenceScore> evaluate_batch(std::span<const EvaluationItem> items, Evaluator& evaluator);

/// Explicit score table keyed by (history texts, response). Unknown pairs
/// get `default_score`. Counts calls for the gate's call-count law.
class TableEvaluator final : public Evaluator {
 public:
  explicit TableEvaluator(double default_score = 0.0, std::string id = "table");

  void set(const DialogueHistory& history, std::string response, double score);
  /// Scores keyed by response text alone, consulted when no exact entry exists.
  void set_for_response(std::string response, double score);

  const EvaluatorDescriptor& descriptor() const noexcept override { return descriptor_; }
  std::vector<double> score_batch(std::span<const EvaluationItem> items) override;
  bool thread_safe() const noexcept override { return true; }

  std::size_t calls() const noexcept { return calls_.load(); }
  void reset_calls() noexcept { calls_ = 0; }

 private:
  EvaluatorDescriptor descriptor_;
  double default_score_;
  std::map<std::pair<std::vector<std::string>, std::string>, double> table_;
  std::map<std::string, double> by_response_;
  std::atomic<std::size_t> calls_{0};
};

/// Proxy coherence: max(0, cos(aggregate(history), encode(response))), at most 1.
class SimilarityProxyEvaluator final : public Evaluator {
 public:
  SimilarityProxyEvaluator(std::shared_ptr<Encoder> encoder, double lambda);

  const EvaluatorDescriptor& descriptor() const noexcept override { return descriptor_; }
  std::vector<double> score_batch(std::span<const EvaluationItem> items) override;
  bool thread_safe() const noexcept override { return encoder_->thread_safe(); }

 private:
  std::shared_ptr<Encoder> encoder_;
  double lambda_;
  EvaluatorDescriptor descriptor_;
};

enum class GatePolicy {
  first_pass,  ///< evaluate in rank order, stop at the first score > t
  rerank_all,  ///< evaluate every candidate in one batch, take the best score > t
};

struct GateHit {
  std::size_t rank = 0;  // 1-based
  std::string response;
  CoherenceScore score{0.0};
  std::size_t evals_used = 0;
  std::vector<CoherenceScore> scores;  // scores of every evaluated candidate, in rank order
};

struct GateMiss {
  std::size_t evals_used = 0;
  std::vector<CoherenceScore> scores;
};

using GateOutcome = std::variant<GateHit, GateMiss>;

/// Evaluates `candidates` (ordered by similarity rank) against threshold t.
/// A candidate passes only when its score is strictly greater than t.
/// Evaluator failures abort with GateError; they are never reported as a miss.
GateOutcome gate(const DialogueHistory& history, std::span<const std::string> candidates, double threshold,
                 Evaluator& evaluator, GatePolicy policy = GatePolicy::first_pass);

}  // namespace convocache

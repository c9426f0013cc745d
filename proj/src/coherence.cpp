#include "convocache/coherence.hpp"

#include <algorithm>
#include <cmath>

namespace convocache {

CoherenceScore::CoherenceScore(double value) : value_(value) {
  if (!(value >= 0.0 && value <= 1.0))
    throw ScoreOutOfRange("coherence score " + std::to_string(value) + " outside [0, 1]");
}

EvaluatorDescriptor::EvaluatorDescriptor(std::string id_, std::string question_)
    : id(std::move(id_)), question(std::move(question_)) {
  if (id.empty()) throw InvalidArgument("evaluator id must be non-empty");
}

std::vector<CoherenceScore> evaluate_batch(std::span<const EvaluationItem> items, Evaluator& evaluator) {
  for (const auto& item : items) {
    if (item.history == nullptr) throw InvalidArgument("evaluation item without history");
    if (trim(item.response).empty()) throw InvalidArgument("evaluation item with empty response");
  }
  const auto raw = evaluator.score_batch(items);
  if (raw.size() != items.size())
    throw ScoreOutOfRange("evaluator '" + evaluator.id() + "' returned " + std::to_string(raw.size()) +
                          " scores for " + std::to_string(items.size()) + " items");
  std::vector<CoherenceScore> out;
  out.reserve(raw.size());
  for (double s : raw) out.emplace_back(s);
  return out;
}

CoherenceScore evaluate(const DialogueHistory& history, std::string_view response, Evaluator& evaluator) {
  const EvaluationItem item{&history, response};
  return evaluate_batch(std::span<const EvaluationItem>(&item, 1), evaluator).front();
}

TableEvaluator::TableEvaluator(double default_score, std::string id)
    : descriptor_(std::move(id)), default_score_(default_score) {}

void TableEvaluator::set(const DialogueHistory& history, std::string response, double score) {
  table_[{history.texts(), std::move(response)}] = score;
}

void TableEvaluator::set_for_response(std::string response, double score) {
  by_response_[std::move(response)] = score;
}

std::vector<double> TableEvaluator::score_batch(std::span<const EvaluationItem> items) {
  calls_ += items.size();
  std::vector<double> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    const std::string response(item.response);
    if (auto it = table_.find({item.history->texts(), response}); it != table_.end()) {
      out.push_back(it->second);
    } else if (auto jt = by_response_.find(response); jt != by_response_.end()) {
      out.push_back(jt->second);
    } else {
      out.push_back(default_score_);
    }
  }
  return out;
}

SimilarityProxyEvaluator::SimilarityProxyEvaluator(std::shared_ptr<Encoder> encoder, double lambda)
    : encoder_(std::move(encoder)), lambda_(lambda), descriptor_("similarity-proxy") {
  if (!encoder_) throw InvalidArgument("similarity proxy needs an encoder");
  if (!(lambda_ >= 0.0)) throw InvalidArgument("similarity proxy lambda must be >= 0");
  descriptor_.id = "similarity-proxy:" + encoder_->id();
}

std::vector<double> SimilarityProxyEvaluator::score_batch(std::span<const EvaluationItem> items) {
  std::vector<double> out;
  out.reserve(items.size());
  for (const auto& item : items) {
    const Embedding context = aggregate(*item.history, lambda_, *encoder_);
    const Embedding reply = encode(Utterance(item.response), *encoder_);
    out.push_back(std::clamp(cosine_similarity(context, reply), 0.0, 1.0));
  }
  return out;
}

namespace {

template <typename F>
auto guarded(Evaluator& evaluator, F&& f) {
  try {
    return f();
  } catch (const GateError&) {
    throw;
  } catch (const Error& e) {
    throw GateError(e.code(), "evaluator '" + evaluator.id() + "' failed: " + e.what());
  } catch (const std::exception& e) {
    throw GateError(ErrorCode::EvaluatorUnavailable, "evaluator '" + evaluator.id() + "' failed: " + e.what());
  }
}

}  // namespace

GateOutcome gate(const DialogueHistory& history, std::span<const std::string> candidates, double threshold,
                 Evaluator& evaluator, GatePolicy policy) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidArgument("threshold must lie in [0, 1]");

  std::vector<CoherenceScore> scores;
  scores.reserve(candidates.size());

  if (policy == GatePolicy::rerank_all) {
    if (candidates.empty()) return GateMiss{0, {}};
    std::vector<EvaluationItem> items;
    for (const auto& c : candidates) items.push_back({&history, c});
    scores = guarded(evaluator, [&] { return evaluate_batch(items, evaluator); });
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].value() > threshold && (!best || scores[i] > scores[*best])) best = i;
    }
    if (!best) return GateMiss{candidates.size(), std::move(scores)};
    return GateHit{*best + 1, candidates[*best], scores[*best], candidates.size(), std::move(scores)};
  }

  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto score = guarded(evaluator, [&] { return evaluate(history, candidates[i], evaluator); });
    scores.push_back(score);
    if (score.value() > threshold) return GateHit{i + 1, candidates[i], score, i + 1, std::move(scores)};
  }
  return GateMiss{candidates.size(), std::move(scores)};
}

}  // namespace convocache

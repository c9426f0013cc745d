#include "convocache/engine.hpp"

#include <chrono>
#include <cmath>

namespace convocache {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

template <typename Component>
struct NonOwning {
  static std::shared_ptr<Component> wrap(Component& c) { return {&c, [](Component*) {}}; }
};

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
}

}  // namespace

std::string_view to_string(Outcome outcome) noexcept { return outcome == Outcome::hit ? "hit" : "miss"; }

EchoGenerator::EchoGenerator(std::string templ) : template_(std::move(templ)) {
  if (trim(template_).empty()) throw InvalidArgument("echo template must be non-empty");
}

std::string EchoGenerator::produce(const DialogueHistory& history) {
  std::string out = template_;
  replace_all(out, "{last}", history.last().text());
  replace_all(out, "{n}", std::to_string(history.size()));
  return out;
}

CacheEngine::CacheEngine(EngineConfig config, std::shared_ptr<CacheStore> store, std::shared_ptr<Encoder> encoder,
                         std::shared_ptr<Evaluator> evaluator, std::shared_ptr<Generator> generator,
                         EngineOptions options)
    : config_(std::move(config)),
      store_(std::move(store)),
      encoder_(std::move(encoder)),
      evaluator_(std::move(evaluator)),
      generator_(std::move(generator)),
      options_(options) {
  config_.validate();
  if (!store_ || !encoder_ || !evaluator_ || !generator_) throw InvalidArgument("engine component missing");
  if (store_->dim() != encoder_->dim())
    throw DimensionMismatch("store dim " + std::to_string(store_->dim()) + " differs from encoder dim " +
                            std::to_string(encoder_->dim()));
  if (config_.encoder_id.empty()) config_.encoder_id = encoder_->id();
  if (config_.evaluator_id.empty()) config_.evaluator_id = evaluator_->id();
}

Embedding CacheEngine::conversation_embedding(const DialogueHistory& history) {
  if (encoder_->thread_safe()) return aggregate(history, config_.lambda, *encoder_);
  std::lock_guard lock(encoder_mutex_);
  return aggregate(history, config_.lambda, *encoder_);
}

GateOutcome CacheEngine::run_gate(const DialogueHistory& history, std::span<const std::string> candidates,
                                  double threshold) {
  if (evaluator_->thread_safe()) return gate(history, candidates, threshold, *evaluator_, options_.policy);
  std::lock_guard lock(evaluator_mutex_);
  return gate(history, candidates, threshold, *evaluator_, options_.policy);
}

std::string CacheEngine::generate(const DialogueHistory& history) {
  std::unique_lock lock(generator_mutex_, std::defer_lock);
  if (!generator_->thread_safe()) lock.lock();
  std::string text;
  try {
    text = generator_->produce(history);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw GeneratorFailure("generator '" + generator_->id() + "' failed: " + e.what());
  }
  if (trim(text).empty()) throw GeneratorFailure("generator '" + generator_->id() + "' returned empty text");
  return text;
}

EngineResponse CacheEngine::respond(const DialogueHistory& history, const RespondOptions& overrides) {
  const auto start = Clock::now();
  const std::size_t k = overrides.k.value_or(config_.k);
  const double threshold = overrides.threshold.value_or(config_.threshold);
  if (k == 0) throw InvalidArgument("k must be >= 1");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidArgument("threshold must lie in [0, 1]");

  EngineResponse out;

  auto t = Clock::now();
  const Embedding query = conversation_embedding(history);
  out.timings.encode_ms = ms_since(t);

  t = Clock::now();
  const auto hits = store_->search(query, k);
  std::vector<std::string> responses;
  responses.reserve(hits.size());
  for (const auto& h : hits) responses.push_back(store_->response_text(h.entry_id));
  out.timings.search_ms = ms_since(t);

  t = Clock::now();
  const GateOutcome verdict = run_gate(history, responses, threshold);
  out.timings.eval_ms = ms_since(t);

  for (const auto& h : hits) out.candidates.push_back(CandidateInfo{h.rank, h.entry_id, h.similarity, std::nullopt});

  if (const auto* hit = std::get_if<GateHit>(&verdict)) {
    for (std::size_t i = 0; i < hit->scores.size(); ++i) out.candidates[i].coherence = hit->scores[i].value();
    out.outcome = Outcome::hit;
    out.response_text = hit->response;
    out.candidate_rank = hit->rank;
    out.coherence = hit->score;
    out.similarity = hits[hit->rank - 1].similarity;
    out.evals_used = hit->evals_used;
    out.filler_recommended = false;
  } else {
    const auto& miss = std::get<GateMiss>(verdict);
    for (std::size_t i = 0; i < miss.scores.size(); ++i) out.candidates[i].coherence = miss.scores[i].value();
    out.outcome = Outcome::miss;
    out.evals_used = miss.evals_used;
    out.filler_recommended = true;

    t = Clock::now();
    out.response_text = generate(history);
    out.timings.generate_ms = ms_since(t);
    if (options_.append_on_miss)
      out.appended_id = store_->append(query, out.response_text, EntrySource::generated);
  }

  out.timings.total_ms = ms_since(start);
  return out;
}

EngineResponse respond(const DialogueHistory& history, const EngineConfig& config, CacheStore& store,
                       Encoder& encoder, Evaluator& evaluator, Generator& generator, const EngineOptions& options) {
  CacheEngine engine(config, NonOwning<CacheStore>::wrap(store), NonOwning<Encoder>::wrap(encoder),
                     NonOwning<Evaluator>::wrap(evaluator), NonOwning<Generator>::wrap(generator), options);
  return engine.respond(history);
}

double expected_latency(const RankDistribution& distribution, double encode_ms, double search_ms, double eval_ms,
                        double sum_tolerance) {
  if (distribution.ranks.empty()) throw InvalidArgument("rank distribution needs at least one rank");
  if (encode_ms < 0 || search_ms < 0 || eval_ms < 0) throw InvalidArgument("component latencies must be >= 0");
  double total = distribution.miss;
  double expected_evals = static_cast<double>(distribution.ranks.size()) * distribution.miss;
  for (std::size_t r = 0; r < distribution.ranks.size(); ++r) {
    const double p = distribution.ranks[r];
    if (p < 0.0) throw InvalidArgument("rank proportions must be >= 0");
    total += p;
    expected_evals += static_cast<double>(r + 1) * p;
  }
  if (distribution.miss < 0.0 || std::abs(total - 1.0) > sum_tolerance)
    throw InvalidArgument("rank proportions sum to " + std::to_string(total) + ", expected 1");
  return encode_ms + search_ms + eval_ms * expected_evals;
}

}  // namespace convocache

#include "convocache/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

namespace convocache {

namespace {

template <typename T>
std::shared_ptr<T> borrow(T& ref) {
  return {&ref, [](T*) {}};
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c >> 5) == 0x6) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c >> 4) == 0xE) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c >> 3) == 0x1E) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t j = 1; j <= extra; ++j) {
      const auto cc = static_cast<unsigned char>(s[i + j]);
      if ((cc >> 6) != 0x2) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates and out-of-range code points.
    if ((extra == 1 && cp < 0x80) || (extra == 2 && cp < 0x800) || (extra == 3 && cp < 0x10000)) return false;
    if ((cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) return false;
    i += extra + 1;
  }
  return true;
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  for (std::string w; in >> w;) out.push_back(std::move(w));
  return out;
}

ComponentStats stats_of(const std::vector<double>& xs) {
  ComponentStats s;
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) {
    sum += x;
    s.max = std::max(s.max, x);
  }
  s.mean = sum / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(var / static_cast<double>(xs.size()));
  return s;
}

nlohmann::ordered_json stats_json(const ComponentStats& s) {
  return {{"mean", s.mean}, {"stddev", s.stddev}, {"max", s.max}};
}

RankReport tally(const std::vector<RequestLog>& log, const EngineConfig& config, const std::string& encoder_id,
                 const std::string& evaluator_id, const ReplayOptions& options) {
  RankReport r;
  r.lambda = config.lambda;
  r.k = config.k;
  r.threshold = config.threshold;
  r.encoder_id = encoder_id;
  r.evaluator_id = evaluator_id;
  r.frozen_cache = options.frozen_cache;
  r.total_requests = log.size();
  r.rank_counts.assign(config.k, 0);

  std::vector<double> enc, sea, eval_req, gen, tot;
  double eval_total = 0.0;
  double evals = 0.0;
  std::vector<double> eval_per_candidate;
  for (const auto& entry : log) {
    const auto& resp = entry.response;
    if (resp.outcome == Outcome::hit) {
      ++r.rank_counts.at(*resp.candidate_rank - 1);
    } else {
      ++r.miss_count;
    }
    enc.push_back(resp.timings.encode_ms);
    sea.push_back(resp.timings.search_ms);
    eval_req.push_back(resp.timings.eval_ms);
    if (resp.outcome == Outcome::miss) gen.push_back(resp.timings.generate_ms);
    tot.push_back(resp.timings.total_ms);
    if (resp.evals_used > 0) {
      eval_total += resp.timings.eval_ms;
      evals += static_cast<double>(resp.evals_used);
      eval_per_candidate.push_back(resp.timings.eval_ms / static_cast<double>(resp.evals_used));
    }
  }

  const double n = static_cast<double>(r.total_requests);
  r.proportions.ranks.resize(config.k);
  for (std::size_t i = 0; i < config.k; ++i) r.proportions.ranks[i] = static_cast<double>(r.rank_counts[i]) / n;
  r.proportions.miss = static_cast<double>(r.miss_count) / n;

  r.encode = stats_of(enc);
  r.search = stats_of(sea);
  r.eval_per_request = stats_of(eval_req);
  r.eval_per_candidate = stats_of(eval_per_candidate);
  if (evals > 0) r.eval_per_candidate.mean = eval_total / evals;  // pooled per-evaluation mean
  r.generate = stats_of(gen);
  r.total = stats_of(tot);

  // Counts are exact; the tolerance only absorbs division rounding.
  r.measured_average_latency_ms =
      expected_latency(r.proportions, r.encode.mean, r.search.mean, r.eval_per_candidate.mean, 1e-9);
  if (options.latency_model) {
    r.latency_model = options.latency_model;
    r.modelled_average_latency_ms = expected_latency(r.proportions, options.latency_model->encode_ms,
                                                     options.latency_model->search_ms,
                                                     options.latency_model->eval_ms, 1e-9);
  }
  return r;
}

std::string fixed(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

std::vector<Conversation> parse_corpus(std::istream& in, Split split) {
  std::vector<Conversation> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!valid_utf8(line)) throw EncodingError("corpus line " + std::to_string(line_no) + " is not valid UTF-8");
    if (trim(line).empty()) continue;
    Conversation conv;
    conv.split = split;
    std::string_view rest = line;
    int speaker = 0;
    while (true) {
      const auto pos = rest.find(kEndOfUtterance);
      const auto segment = trim(rest.substr(0, pos));
      if (!segment.empty()) conv.utterances.emplace_back(segment, speaker++ % 2);
      if (pos == std::string_view::npos) break;
      rest = rest.substr(pos + kEndOfUtterance.size());
    }
    if (!conv.utterances.empty()) out.push_back(std::move(conv));
  }
  if (in.bad()) throw IoError("failed reading corpus");
  return out;
}

std::vector<Conversation> parse_corpus(const std::filesystem::path& path, Split split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus: " + path.string());
  return parse_corpus(in, split);
}

std::vector<PromptResponsePair> extract_pairs(const Conversation& conversation) {
  std::vector<PromptResponsePair> out;
  const auto& u = conversation.utterances;
  for (std::size_t j = 1; j < u.size(); ++j)
    out.push_back(PromptResponsePair{DialogueHistory({u.begin(), u.begin() + static_cast<std::ptrdiff_t>(j)}), u[j]});
  return out;
}

std::vector<PromptResponsePair> extract_pairs(std::span<const Conversation> conversations) {
  std::vector<PromptResponsePair> out;
  for (const auto& c : conversations) {
    auto pairs = extract_pairs(c);
    std::move(pairs.begin(), pairs.end(), std::back_inserter(out));
  }
  return out;
}

std::size_t seed(std::span<const PromptResponsePair> pairs, double lambda, CacheStore& store, Encoder& encoder) {
  if (store.dim() != encoder.dim())
    throw DimensionMismatch("store dim " + std::to_string(store.dim()) + " differs from encoder dim " +
                            std::to_string(encoder.dim()));
  for (const auto& pair : pairs)
    store.append(aggregate(pair.history, lambda, encoder), pair.response.text(), EntrySource::seeded);
  return pairs.size();
}

DialogueHistory truncate_last_utterance(const DialogueHistory& history, double split) {
  if (!(split > 0.0 && split <= 1.0)) throw InvalidArgument("split must lie in (0, 1]");
  if (split == 1.0) return history;
  const auto words = whitespace_tokens(history.last().text());
  // Guard against products like 0.7 * 10 = 7.000000000000001.
  const auto keep = static_cast<std::size_t>(
      std::max(1.0, std::ceil(split * static_cast<double>(words.size()) - 1e-9)));
  std::string text;
  for (std::size_t i = 0; i < std::min(keep, words.size()); ++i) {
    if (i) text += ' ';
    text += words[i];
  }
  std::vector<Utterance> out(history.utterances().begin(), history.utterances().end() - 1);
  out.emplace_back(text, history.last().speaker_index());
  return DialogueHistory(std::move(out));
}

ReplayResult replay(std::span<const PromptResponsePair> test_pairs, const EngineConfig& config, CacheStore& store,
                    Encoder& encoder, Evaluator& evaluator, Generator& generator, const ReplayOptions& options) {
  if (test_pairs.empty()) throw InvalidArgument("replay needs at least one test pair");
  EngineOptions engine_options;
  engine_options.policy = options.policy;
  engine_options.append_on_miss = !options.frozen_cache;
  CacheEngine engine(config, borrow(store), borrow(encoder), borrow(evaluator), borrow(generator), engine_options);

  std::vector<RequestLog> log(test_pairs.size());
  auto run = [&](std::size_t i) {
    const auto& pair = test_pairs[i];
    log[i] = RequestLog{i, pair.history.texts(), pair.response.text(), engine.respond(pair.history)};
  };

  const std::size_t threads = options.frozen_cache ? std::max<std::size_t>(1, options.threads) : 1;
  if (threads == 1) {
    for (std::size_t i = 0; i < test_pairs.size(); ++i) run(i);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          try {
            for (std::size_t i = t; i < test_pairs.size(); i += threads) run(i);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  ReplayResult result;
  result.report = tally(log, config, engine.config().encoder_id, engine.config().evaluator_id, options);
  result.log = std::move(log);
  return result;
}

std::vector<SplitReport> prefetch_replay(std::span<const PromptResponsePair> test_pairs, const EngineConfig& config,
                                         std::span<const double> splits, CacheStore& store, Encoder& encoder,
                                         Evaluator& evaluator, Generator& generator, const ReplayOptions& options) {
  for (double s : splits)
    if (!(s > 0.0 && s <= 1.0)) throw InvalidArgument("split must lie in (0, 1]");

  std::vector<SplitReport> out;
  for (double split : splits) {
    std::vector<PromptResponsePair> truncated;
    truncated.reserve(test_pairs.size());
    for (const auto& p : test_pairs)
      truncated.push_back(PromptResponsePair{truncate_last_utterance(p.history, split), p.response});
    if (options.frozen_cache) {
      out.push_back(SplitReport{split, replay(truncated, config, store, encoder, evaluator, generator, options)});
    } else {
      CacheStore scratch(store);
      out.push_back(SplitReport{split, replay(truncated, config, scratch, encoder, evaluator, generator, options)});
    }
  }
  return out;
}

std::vector<SweepRow> lambda_sweep(std::span<const PromptResponsePair> train_pairs,
                                   std::span<const PromptResponsePair> test_pairs, const EngineConfig& config,
                                   std::span<const double> lambdas, Encoder& encoder, Evaluator& evaluator,
                                   Generator& generator, const ReplayOptions& options) {
  std::vector<SweepRow> rows;
  for (double lambda : lambdas) {
    EngineConfig c = config;
    c.lambda = lambda;
    c.validate();
    CacheStore store(encoder.dim(), lambda, encoder.id());
    seed(train_pairs, lambda, store, encoder);
    rows.push_back(SweepRow{lambda, replay(test_pairs, c, store, encoder, evaluator, generator, options)});
  }
  return rows;
}

nlohmann::ordered_json to_json(const RankReport& r, bool include_timings) {
  nlohmann::ordered_json j;
  j["config"] = {{"lambda", r.lambda},
                 {"k", r.k},
                 {"threshold", r.threshold},
                 {"encoder_id", r.encoder_id},
                 {"evaluator_id", r.evaluator_id},
                 {"frozen_cache", r.frozen_cache}};
  j["total_requests"] = r.total_requests;
  nlohmann::ordered_json counts, proportions;
  for (std::size_t i = 0; i < r.rank_counts.size(); ++i) {
    counts["rank_" + std::to_string(i + 1)] = r.rank_counts[i];
    proportions["rank_" + std::to_string(i + 1)] = r.proportions.ranks[i];
  }
  counts["miss"] = r.miss_count;
  proportions["miss"] = r.proportions.miss;
  j["counts"] = counts;
  j["proportions"] = proportions;
  j["hit_rate"] = r.hit_rate();

  nlohmann::ordered_json latency = nlohmann::ordered_json::object();
  if (include_timings) {
    latency["encode_ms"] = stats_json(r.encode);
    latency["search_ms"] = stats_json(r.search);
    latency["eval_ms_per_candidate"] = stats_json(r.eval_per_candidate);
    latency["eval_ms_per_request"] = stats_json(r.eval_per_request);
    latency["generate_ms"] = stats_json(r.generate);
    latency["total_ms"] = stats_json(r.total);
    latency["measured_average_latency_ms"] = r.measured_average_latency_ms;
  }
  if (r.latency_model) {
    latency["model"] = {{"encode_ms", r.latency_model->encode_ms},
                        {"search_ms", r.latency_model->search_ms},
                        {"eval_ms", r.latency_model->eval_ms}};
    latency["modelled_average_latency_ms"] = *r.modelled_average_latency_ms;
  }
  if (!latency.empty()) j["latency"] = latency;
  return j;
}

nlohmann::ordered_json to_json(const EngineResponse& resp, bool include_timings) {
  nlohmann::ordered_json j;
  j["response_text"] = resp.response_text;
  j["outcome"] = to_string(resp.outcome);
  j["candidate_rank"] = resp.candidate_rank ? nlohmann::ordered_json(*resp.candidate_rank) : nullptr;
  j["coherence"] = resp.coherence ? nlohmann::ordered_json(resp.coherence->value()) : nullptr;
  j["similarity"] = resp.similarity ? nlohmann::ordered_json(*resp.similarity) : nullptr;
  j["evals_used"] = resp.evals_used;
  j["filler_recommended"] = resp.filler_recommended;
  if (include_timings) {
    j["timings"] = {{"encode_ms", resp.timings.encode_ms},
                    {"search_ms", resp.timings.search_ms},
                    {"eval_ms", resp.timings.eval_ms},
                    {"generate_ms", resp.timings.generate_ms},
                    {"total_ms", resp.timings.total_ms}};
  }
  auto candidates = nlohmann::ordered_json::array();
  for (const auto& c : resp.candidates) {
    candidates.push_back({{"rank", c.rank},
                          {"entry_id", c.entry_id},
                          {"similarity", c.similarity},
                          {"coherence", c.coherence ? nlohmann::ordered_json(*c.coherence) : nullptr}});
  }
  j["candidates"] = candidates;
  return j;
}

nlohmann::ordered_json to_json(const RequestLog& entry, bool include_timings) {
  nlohmann::ordered_json j;
  j["index"] = entry.index;
  j["history_hash"] = history_hash(entry.history);
  j["history"] = entry.history;
  j["reference_response"] = entry.reference_response;
  const auto response = to_json(entry.response, include_timings);
  for (const auto& [key, value] : response.items()) j[key] = value;
  return j;
}

std::string history_hash(std::span<const std::string> history) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&](unsigned char c) {
    h ^= c;
    h *= 0x100000001B3ULL;
  };
  for (const auto& u : history) {
    for (unsigned char c : u) mix(c);
    mix(0x1F);
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void write_log(std::ostream& out, std::span<const RequestLog> log, bool include_timings) {
  for (const auto& entry : log) out << to_json(entry, include_timings).dump() << '\n';
}

std::string format_table(const RankReport& r) {
  std::ostringstream os;
  os << "lambda=" << r.lambda << " k=" << r.k << " t=" << r.threshold << " requests=" << r.total_requests
     << (r.frozen_cache ? " (frozen cache)" : " (growing cache)") << '\n';
  for (std::size_t i = 0; i < r.rank_counts.size(); ++i)
    os << "  rank " << (i + 1) << "  " << std::setw(7) << fixed(100.0 * r.proportions.ranks[i], 2) << "%  ("
       << r.rank_counts[i] << ")\n";
  os << "  miss    " << std::setw(7) << fixed(100.0 * r.proportions.miss, 2) << "%  (" << r.miss_count << ")\n";
  os << "  hit rate " << fixed(100.0 * r.hit_rate(), 2) << "%\n";
  os << "  average latency " << fixed(r.average_latency_ms(), 1) << " ms"
     << (r.modelled_average_latency_ms ? " (latency model)" : " (measured)") << '\n';
  return os.str();
}

std::string format_prefetch_table(std::span<const SplitReport> reports) {
  std::ostringstream os;
  os << "split   hit rate   miss\n";
  for (const auto& s : reports) {
    os << std::setw(4) << fixed(100.0 * s.split, 0) << "%   " << std::setw(7)
       << fixed(100.0 * s.result.report.hit_rate(), 2) << "%  " << std::setw(6)
       << fixed(100.0 * s.result.report.proportions.miss, 2) << "%\n";
  }
  return os.str();
}

}  // namespace convocache

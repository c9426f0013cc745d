// Acceptance suite: one PASS/FAIL/SKIP line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <unistd.h>

#include "convocache/engine.hpp"
#include "convocache/harness.hpp"
#include "support/synthetic.hpp"

using namespace convocache;
namespace fs = std::filesystem;

namespace {

struct Skip {
  std::string reason;
};

/// Collects the first failure message of a criterion.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failure_.empty()) failure_ = what;
  }
  bool ok() const { return failure_.empty(); }
  const std::string& failure() const { return failure_; }
  std::string note;

 private:
  std::string failure_;
};

int failures = 0;

void criterion(const std::string& name, double budget_s, const std::function<void(Check&)>& body) {
  Check c;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const Skip& s) {
    std::cout << "SKIP  " << name << "  (" << s.reason << ")\n";
    return;
  } catch (const std::exception& e) {
    c.expect(false, std::string("unexpected exception: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (budget_s > 0) c.expect(secs < budget_s, "took " + std::to_string(secs) + " s, budget " + std::to_string(budget_s));
  std::ostringstream line;
  line.precision(3);
  line << std::fixed << (c.ok() ? "PASS  " : "FAIL  ") << name << "  [" << secs << " s]";
  if (!c.note.empty()) line << "  " << c.note;
  if (!c.ok()) {
    line << "  -- " << c.failure();
    ++failures;
  }
  std::cout << line.str() << std::endl;
}

std::vector<std::uint64_t> brute_force(const std::vector<Embedding>& vectors, const Embedding& q, std::size_t k) {
  std::vector<std::pair<double, std::uint64_t>> all;
  for (std::size_t id = 0; id < vectors.size(); ++id) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) s += double(vectors[id][i]) * double(q[i]);
    all.emplace_back(s, id);
  }
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  std::vector<std::uint64_t> ids;
  for (std::size_t i = 0; i < k; ++i) ids.push_back(all[i].second);
  return ids;
}

std::string report_bytes(const ReplayResult& r) {
  std::ostringstream out;
  out << to_json(r.report, false).dump() << '\n';
  write_log(out, r.log, false);
  return out.str();
}

std::size_t word_count(const std::string& s) {
  std::istringstream in(s);
  std::size_t n = 0;
  for (std::string w; in >> w;) ++n;
  return n;
}

void latency_regression(Check& c) {
  const RankDistribution simcse{{0.5651, 0.1552, 0.0887, 0.0475, 0.0313}, 0.1122};
  const RankDistribution angle{{0.5772, 0.1573, 0.0855, 0.0499, 0.0272}, 0.1031};
  const double a = expected_latency(simcse, 10.5, 1.0, 98.7);
  // This row is rounded to two decimals in percent and sums to 1.0002.
  const double b = expected_latency(angle, 46.3, 3.3, 98.7, 5e-4);
  c.expect(std::abs(a - 214.0) <= 1.0, "SimCSE-class row gave " + std::to_string(a));
  c.expect(std::abs(b - 247.0) <= 1.0, "AnglE-class row gave " + std::to_string(b));
  std::ostringstream note;
  note.precision(2);
  note << std::fixed << "SimCSE-class " << a << " ms, AnglE-class " << b << " ms";
  c.note = note.str();
}

void index_oracle(Check& c) {
  std::mt19937_64 rng(20240601);
  CacheStore store(32, 0.5, "acceptance");
  std::vector<Embedding> vectors;
  for (int i = 0; i < 1000; ++i) {
    // Every 10th vector repeats an earlier one so that exact ties occur.
    Embedding v = (i >= 100 && i % 10 == 0) ? vectors[static_cast<std::size_t>(rng() % i)] : testing::random_unit(rng, 32);
    vectors.push_back(v);
    store.append(v, "r" + std::to_string(i), EntrySource::seeded);
  }
  std::size_t tied_queries = 0;
  for (int q = 0; q < 100; ++q) {
    // A quarter of the queries sit exactly on a stored vector.
    const Embedding query = q % 4 == 0 ? vectors[static_cast<std::size_t>(rng() % 1000)] : testing::random_unit(rng, 32);
    const auto hits = store.search(query, 5);
    const auto oracle = brute_force(vectors, query, 5);
    c.expect(hits.size() == 5, "expected 5 hits");
    for (std::size_t i = 0; i < hits.size(); ++i) {
      c.expect(hits[i].entry_id == oracle[i], "query " + std::to_string(q) + " rank " + std::to_string(i + 1) +
                                                  " id " + std::to_string(hits[i].entry_id) + " vs oracle " +
                                                  std::to_string(oracle[i]));
      c.expect(hits[i].rank == i + 1, "ranks must be 1-based and consecutive");
    }
    if (hits.size() >= 2 && hits[0].similarity == hits[1].similarity) ++tied_queries;
  }
  c.expect(tied_queries > 0, "no query exercised the tie-break");
  c.note = std::to_string(tied_queries) + " queries with a tie at rank 1";
}

void weight_math(Check& c) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> lambda_dist(0.0, 50.0);
  std::size_t cases = 0;
  auto check_one = [&](std::size_t n, double lambda) {
    ++cases;
    const auto w = decay_weights(n, lambda);
    const std::string at = " at n=" + std::to_string(n) + " lambda=" + std::to_string(lambda);
    c.expect(std::abs(w.sum() - 1.0) <= 1e-9, "sum != 1" + at);
    c.expect((w.array() >= 0.0).all() && w.allFinite(), "negative or non-finite weight" + at);
    for (Eigen::Index i = 1; i < w.size(); ++i) {
      if (lambda > 0) {
        // Strictly decreasing until the weights underflow to zero.
        c.expect(w[i] < w[i - 1] || (w[i] == 0.0 && w[i - 1] == 0.0), "not strictly decreasing" + at);
      } else {
        c.expect(std::abs(w[i] - 1.0 / double(n)) <= 1e-12, "not uniform" + at);
      }
    }
  };
  for (int t = 0; t < 2000; ++t) check_one(1 + rng() % 50, lambda_dist(rng));
  for (std::size_t n = 1; n <= 50; ++n) check_one(n, 0.0);
  for (double lambda : {1e-6, 0.25, 0.5, 0.75, 1.0, 50.0})
    for (std::size_t n : {1, 2, 5, 50}) check_one(n, lambda);
  const auto sharp = decay_weights(5, 50.0);
  c.expect(sharp[0] > 1.0 - 1e-9, "w_1 at lambda=50, n=5 is " + std::to_string(sharp[0]));
  c.note = std::to_string(cases) + " (n, lambda) cases";
}

void engine_state_machine(Check& c) {
  std::mt19937_64 rng(99);
  auto encoder = std::make_shared<ReferenceEncoder>(32, 3);
  const double grid[] = {0.0, 0.25, 0.5, 0.75, 0.9, 1.0};
  std::size_t hits = 0, misses = 0, boundary = 0;
  for (int scenario = 0; scenario < 1000; ++scenario) {
    auto store = std::make_shared<CacheStore>(32, 0.5, encoder->id());
    const std::size_t size = rng() % 12;
    for (std::size_t i = 0; i < size; ++i)
      store->append(testing::random_unit(rng, 32), "entry " + std::to_string(i), EntrySource::seeded);
    const std::size_t k = 1 + rng() % 8;
    const double t = grid[rng() % 6];
    // Scores land on the same grid as t so that score == t happens often.
    std::vector<double> scores(k);
    for (auto& s : scores) s = grid[rng() % 6];
    auto evaluator = std::make_shared<testing::ScriptedEvaluator>(scores);
    auto generator = std::make_shared<testing::CountingGenerator>();
    EngineOptions options;
    options.append_on_miss = rng() % 4 != 0;
    CacheEngine engine(EngineConfig::make(0.5, k, t), store, encoder, evaluator, generator, options);

    const auto history = DialogueHistory::from_texts({"scenario " + std::to_string(scenario), "turn two"});
    const auto before = store->size();
    const auto expected_candidates = store->search(aggregate(history, 0.5, *encoder), k);
    const auto out = engine.respond(history);
    const std::string at = " in scenario " + std::to_string(scenario);

    // Oracle: the first candidate whose score is strictly above t.
    std::optional<std::size_t> first_pass;
    for (std::size_t r = 0; r < expected_candidates.size(); ++r) {
      if (scores[r] == t) ++boundary;
      if (scores[r] > t) {
        first_pass = r;
        break;
      }
    }
    if (first_pass) {
      ++hits;
      c.expect(out.outcome == Outcome::hit, "expected hit" + at);
      c.expect(out.candidate_rank == *first_pass + 1, "wrong rank" + at);
      c.expect(out.response_text == store->response_text(expected_candidates[*first_pass].entry_id),
               "wrong response" + at);
      c.expect(out.coherence && out.coherence->value() > t, "hit score not above t" + at);
      c.expect(evaluator->calls == *first_pass + 1, "gate call count on hit" + at);
      c.expect(generator->calls == 0, "generator called on hit" + at);
      c.expect(store->size() == before, "store grew on hit" + at);
    } else {
      ++misses;
      c.expect(out.outcome == Outcome::miss, "expected miss" + at);
      c.expect(evaluator->calls == std::min(k, before), "gate call count on miss" + at);
      c.expect(generator->calls == 1, "generator not called exactly once on miss" + at);
      c.expect(store->size() == before + (options.append_on_miss ? 1 : 0), "store-size law on miss" + at);
      c.expect(out.filler_recommended, "miss without filler recommendation" + at);
    }
    c.expect(out.evals_used == evaluator->calls, "evals_used disagrees with the evaluator" + at);
  }
  c.expect(hits > 0 && misses > 0 && boundary > 0, "scenarios did not cover hit, miss and score == t");
  c.note = std::to_string(hits) + " hits, " + std::to_string(misses) + " misses, " + std::to_string(boundary) +
           " scores equal to t";
}

void pair_extraction(Check& c) {
  std::istringstream three("hello __eou__ hi there __eou__ how are you __eou__\n");
  const auto pairs = extract_pairs(parse_corpus(three, Split::train));
  c.expect(pairs.size() == 2, "3-utterance conversation gave " + std::to_string(pairs.size()) + " pairs");
  if (pairs.size() == 2) {
    c.expect(pairs[0].history.size() == 1 && pairs[0].response.text() == "hi there", "first pair content");
    c.expect(pairs[1].history.size() == 2 && pairs[1].response.text() == "how are you", "second pair content");
  }
  std::istringstream one("alone __eou__\n");
  c.expect(extract_pairs(parse_corpus(one, Split::train)).empty(), "1-utterance conversation gave pairs");
}

void dailydialog_counts(Check& c) {
  const char* dir = std::getenv("CONVOCACHE_DAILYDIALOG_DIR");
  if (!dir) throw Skip{"set CONVOCACHE_DAILYDIALOG_DIR to the DailyDialog root to run"};
  const fs::path root(dir);
  const auto train = extract_pairs(parse_corpus(root / "train" / "dialogues_train.txt", Split::train));
  const auto test = extract_pairs(parse_corpus(root / "test" / "dialogues_test.txt", Split::test));
  c.expect(train.size() == 76052, "train pairs " + std::to_string(train.size()));
  c.expect(test.size() == 6740, "test pairs " + std::to_string(test.size()));
  c.note = "train " + std::to_string(train.size()) + ", test " + std::to_string(test.size());
}

struct HermeticSetup {
  std::shared_ptr<ReferenceEncoder> encoder = std::make_shared<ReferenceEncoder>(128, 7);
  SimilarityProxyEvaluator evaluator{encoder, 0.5};
  EchoGenerator generator;
  std::vector<PromptResponsePair> train, test;
  CacheStore store{128, 0.5, encoder->id()};
  EngineConfig config = EngineConfig::make(0.5, 5, 0.6);

  HermeticSetup() {
    auto conversations = testing::synthetic_corpus(200, 2024);
    std::vector<Conversation> train_c(conversations.begin(), conversations.begin() + 150);
    std::vector<Conversation> test_c(conversations.begin() + 150, conversations.end());
    train = extract_pairs(train_c);
    test = extract_pairs(test_c);
    seed(train, 0.5, store, *encoder);
  }
};

void hermetic_replay(Check& c) {
  HermeticSetup s;
  const auto first = replay(s.test, s.config, s.store, *s.encoder, s.evaluator, s.generator);
  const auto second = replay(s.test, s.config, s.store, *s.encoder, s.evaluator, s.generator);
  const auto& r = first.report;

  double total = r.proportions.miss;
  for (double p : r.proportions.ranks) total += p;
  c.expect(std::abs(total - 1.0) <= 1e-6, "proportions sum to " + std::to_string(total));

  std::vector<std::size_t> recount(r.rank_counts.size(), 0);
  std::size_t recount_miss = 0;
  for (const auto& entry : first.log) {
    if (entry.response.outcome == Outcome::hit)
      ++recount.at(*entry.response.candidate_rank - 1);
    else
      ++recount_miss;
  }
  c.expect(first.log.size() == r.total_requests && r.total_requests == s.test.size(), "request count");
  c.expect(recount == r.rank_counts && recount_miss == r.miss_count, "log recount disagrees with the report");
  for (std::size_t i = 0; i < recount.size(); ++i)
    c.expect(std::abs(r.proportions.ranks[i] - double(recount[i]) / double(r.total_requests)) <= 1e-12,
             "proportion of rank " + std::to_string(i + 1));
  c.expect(report_bytes(first) == report_bytes(second), "two runs are not byte-identical");
  c.expect(s.store.size() == s.train.size(), "frozen cache grew");

  std::ostringstream note;
  note.precision(4);
  note << std::fixed << r.total_requests << " requests, hit rate " << r.hit_rate();
  c.note = note.str();
}

void prefetch_mechanics(Check& c) {
  const auto history = DialogueHistory::from_texts({"earlier turn", "one two three four five six seven eight nine ten"});
  const std::pair<double, std::size_t> expected[] = {{1.0, 10}, {0.9, 9}, {0.8, 8}, {0.7, 7}, {0.6, 6},
                                                      {0.55, 6}, {0.01, 1}};
  for (const auto& [split, words] : expected) {
    const auto cut = truncate_last_utterance(history, split);
    c.expect(word_count(cut.last().text()) == words,
             "split " + std::to_string(split) + " kept " + std::to_string(word_count(cut.last().text())) + " words");
    c.expect(cut[0] == history[0], "earlier utterances must be untouched");
  }
  const auto seven = DialogueHistory::from_texts({"a b c d e f g"});
  c.expect(word_count(truncate_last_utterance(seven, 0.6).last().text()) == 5, "ceil(0.6 * 7) must be 5");
  c.expect(word_count(truncate_last_utterance(seven, 0.7).last().text()) == 5, "ceil(0.7 * 7) must be 5");
  c.expect(truncate_last_utterance(seven, 1.0) == seven, "split 1.0 is not the identity");
  c.expect(truncate_last_utterance(DialogueHistory::from_texts({"single"}), 0.6).last().text() == "single",
           "a one-word utterance must survive truncation");

  HermeticSetup s;
  const auto plain = replay(s.test, s.config, s.store, *s.encoder, s.evaluator, s.generator);
  const double one[] = {1.0};
  const auto pre = prefetch_replay(s.test, s.config, one, s.store, *s.encoder, s.evaluator, s.generator);
  c.expect(pre.size() == 1, "expected one split report");
  if (!pre.empty())
    c.expect(to_json(pre[0].result.report, false).dump() == to_json(plain.report, false).dump(),
             "prefetch at 1.0 differs from plain replay");
}

void snapshot_round_trip(Check& c) {
  const fs::path path = fs::temp_directory_path() / ("convocache_acceptance_" + std::to_string(::getpid()) + ".cvch");
  std::mt19937_64 rng(31);
  CacheStore store(48, 0.5, "acceptance");
  for (int i = 0; i < 1000; ++i) {
    std::optional<std::string> audio;
    if (i % 7 == 0) audio = "audio/" + std::to_string(i) + ".wav";
    store.append(testing::random_unit(rng, 48), "response " + std::to_string(i),
                 i % 3 ? EntrySource::seeded : EntrySource::generated, audio);
  }
  store.save_snapshot(path);
  const auto loaded = CacheStore::load_snapshot(path, 48);
  c.expect(loaded.size() == store.size(), "entry count changed");
  c.expect(loaded.info().encoder_id == "acceptance" && loaded.info().lambda == 0.5, "header fields changed");
  for (int q = 0; q < 50; ++q) {
    const auto query = testing::random_unit(rng, 48);
    const auto a = store.search(query, 5);
    const auto b = loaded.search(query, 5);
    bool same = a.size() == b.size();
    for (std::size_t i = 0; same && i < a.size(); ++i)
      same = a[i].entry_id == b[i].entry_id && a[i].similarity == b[i].similarity &&
             store.response_text(a[i].entry_id) == loaded.response_text(b[i].entry_id);
    c.expect(same, "search results differ for query " + std::to_string(q));
  }
  const auto original = store.entry(7), restored = loaded.entry(7);
  c.expect(original.audio_ref == restored.audio_ref && original.source == restored.source &&
               original.created_at == restored.created_at,
           "entry metadata changed");

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  bool format_error = false;
  try {
    CacheStore::load_snapshot(path);
  } catch (const FormatError&) {
    format_error = true;
  }
  c.expect(format_error, "corrupted magic did not raise FormatError");
  fs::remove(path);
}

}  // namespace

int main() {
  std::cout << "convocache acceptance suite\n";
  criterion("latency accounting: 214 ms and 247 ms within 1 ms", 0, latency_regression);
  criterion("index: top-5 matches a brute-force oracle, ties to lower id", 5.0, index_oracle);
  criterion("decay weights: sum, monotonicity, uniform at 0, sharp at 50", 1.0, weight_math);
  criterion("engine: store-size, generator, gate-count and strict threshold laws", 5.0, engine_state_machine);
  criterion("pair extraction: 3 utterances -> 2 pairs, 1 -> 0", 0, pair_extraction);
  criterion("pair extraction: DailyDialog 76052 train / 6740 test pairs", 0, dailydialog_counts);
  criterion("hermetic replay: proportions sum to 1, recount, byte-identical", 30.0, hermetic_replay);
  criterion("prefetch: ceil word truncation, identity at 1.0, equals replay", 0, prefetch_mechanics);
  criterion("snapshot: 1000-entry round trip, corrupted magic -> FormatError", 0, snapshot_round_trip);
  std::cout << (failures ? "FAILED: " + std::to_string(failures) + " criterion(s)\n" : "all criteria passed\n");
  return failures ? 1 : 0;
}

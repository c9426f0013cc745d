#include <doctest.h>

#include <random>

#include "convocache/coherence.hpp"
#include "support/synthetic.hpp"

using namespace convocache;
using testing::ScriptedEvaluator;

namespace {

std::vector<std::string> names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("candidate " + std::to_string(i + 1));
  return out;
}

const DialogueHistory& history() {
  static const auto h = DialogueHistory::from_texts({"hi", "how are you"});
  return h;
}

}  // namespace

TEST_CASE("coherence score range") {
  CHECK(CoherenceScore(0.0).value() == 0.0);
  CHECK(CoherenceScore(1.0).value() == 1.0);
  CHECK_THROWS_AS(CoherenceScore(1.3), ScoreOutOfRange);
  CHECK_THROWS_AS(CoherenceScore(-0.01), ScoreOutOfRange);
  CHECK_THROWS_AS(CoherenceScore(std::nan("")), ScoreOutOfRange);
}

TEST_CASE("evaluator descriptor carries the default coherence question") {
  EvaluatorDescriptor d("unieval");
  CHECK(d.question == "question: Is this a coherent response given the dialogue history?");
  CHECK_THROWS_AS(EvaluatorDescriptor(""), InvalidArgument);
}

TEST_CASE("table evaluator lookup") {
  TableEvaluator table;
  table.set(history(), "fine thanks", 0.95);
  CHECK(evaluate(history(), "fine thanks", table).value() == 0.95);
  CHECK(evaluate(history(), "something else", table).value() == 0.0);
  table.set_for_response("anything", 0.4);
  CHECK(evaluate(DialogueHistory::from_texts({"x"}), "anything", table).value() == 0.4);
  CHECK(table.calls() == 3);
}

TEST_CASE("out of range scores are rejected") {
  ScriptedEvaluator remote({1.3});
  CHECK_THROWS_AS(evaluate(history(), "r", remote), ScoreOutOfRange);
  TableEvaluator empty_response;
  CHECK_THROWS_AS(evaluate(history(), "  ", empty_response), InvalidArgument);
}

TEST_CASE("similarity proxy on identical text") {
  auto enc = std::make_shared<ReferenceEncoder>(64, 7);
  SimilarityProxyEvaluator proxy(enc, 0.5);
  const auto h = DialogueHistory::from_texts({"nice to meet you"});
  const double score = evaluate(h, "nice to meet you", proxy).value();
  CHECK(score > 0.0);
  CHECK(score <= 1.0);
  CHECK(score == doctest::Approx(1.0).epsilon(1e-6));

  // Oracle: cosine of aggregate and encoding, clamped.
  const auto h2 = DialogueHistory::from_texts({"do you like tea", "yes i like green tea"});
  const auto ctx = aggregate(h2, 0.5, *enc);
  const auto reply = encode(Utterance("green tea is great"), *enc);
  double dot = 0.0;
  for (Eigen::Index i = 0; i < ctx.size(); ++i) dot += double(ctx[i]) * double(reply[i]);
  CHECK(evaluate(h2, "green tea is great", proxy).value() == doctest::Approx(std::clamp(dot, 0.0, 1.0)).epsilon(1e-6));
}

TEST_CASE("gate: first candidate passes") {
  ScriptedEvaluator ev({0.95, 0.99});
  const auto out = gate(history(), names(2), 0.9, ev);
  const auto* hit = std::get_if<GateHit>(&out);
  REQUIRE(hit);
  CHECK(hit->rank == 1);
  CHECK(hit->evals_used == 1);
  CHECK(hit->response == "candidate 1");
  CHECK(ev.calls == 1);
}

TEST_CASE("gate: stops at the third candidate") {
  ScriptedEvaluator ev({0.5, 0.6, 0.91, 0.99, 0.99});
  const auto out = gate(history(), names(5), 0.9, ev);
  const auto* hit = std::get_if<GateHit>(&out);
  REQUIRE(hit);
  CHECK(hit->rank == 3);
  CHECK(hit->evals_used == 3);
  CHECK(hit->score.value() == 0.91);
  CHECK(ev.calls == 3);
}

TEST_CASE("gate: all below threshold is a miss") {
  ScriptedEvaluator ev(std::vector<double>(5, 0.1));
  const auto out = gate(history(), names(5), 0.9, ev);
  const auto* miss = std::get_if<GateMiss>(&out);
  REQUIRE(miss);
  CHECK(miss->evals_used == 5);
  CHECK(miss->scores.size() == 5);
  CHECK(ev.calls == 5);
}

TEST_CASE("gate: a score equal to the threshold does not pass") {
  ScriptedEvaluator ev({0.9, 0.9});
  CHECK(std::holds_alternative<GateMiss>(gate(history(), names(2), 0.9, ev)));
  ScriptedEvaluator ev2({0.9, std::nextafter(0.9, 1.0)});
  const auto out = gate(history(), names(2), 0.9, ev2);
  REQUIRE(std::holds_alternative<GateHit>(out));
  CHECK(std::get<GateHit>(out).rank == 2);
}

TEST_CASE("gate: no candidates is a miss with zero evaluations") {
  ScriptedEvaluator ev({});
  const auto out = gate(history(), {}, 0.9, ev);
  REQUIRE(std::holds_alternative<GateMiss>(out));
  CHECK(std::get<GateMiss>(out).evals_used == 0);
}

TEST_CASE("gate: evaluator failure aborts instead of missing") {
  ScriptedEvaluator ev({0.1, 0.2, 0.3});
  ev.fail_at = 1;
  try {
    gate(history(), names(3), 0.9, ev);
    FAIL("expected GateError");
  } catch (const GateError& e) {
    CHECK(e.cause() == ErrorCode::EvaluatorUnavailable);
  }
  ScriptedEvaluator out_of_range({0.1, 1.5});
  CHECK_THROWS_AS(gate(history(), names(2), 0.9, out_of_range), GateError);
}

TEST_CASE("gate: raising t never helps") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> scores(5);
    for (auto& s : scores) s = std::round(u(rng) * 20) / 20;  // coarse grid to create ties with t
    const double t1 = std::round(u(rng) * 20) / 20;
    const double t2 = std::min(1.0, t1 + std::round(u(rng) * 10) / 20);
    ScriptedEvaluator a(scores), b(scores);
    const auto low = gate(history(), names(5), t1, a);
    const auto high = gate(history(), names(5), t2, b);
    if (std::holds_alternative<GateMiss>(low)) CHECK(std::holds_alternative<GateMiss>(high));
    if (const auto* hh = std::get_if<GateHit>(&high)) {
      REQUIRE(std::holds_alternative<GateHit>(low));
      CHECK(std::get<GateHit>(low).rank <= hh->rank);
    }
  }
}

TEST_CASE("gate: rerank_all evaluates everything and keeps the best") {
  ScriptedEvaluator ev({0.91, 0.5, 0.97, 0.93});
  const auto out = gate(history(), names(4), 0.9, ev, GatePolicy::rerank_all);
  REQUIRE(std::holds_alternative<GateHit>(out));
  CHECK(std::get<GateHit>(out).rank == 3);
  CHECK(std::get<GateHit>(out).evals_used == 4);
  CHECK(ev.calls == 4);
}

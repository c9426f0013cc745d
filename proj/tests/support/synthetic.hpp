#pragma once

// Deterministic chit-chat corpus for hermetic replay tests.

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "convocache/harness.hpp"
#include "convocache/index.hpp"

namespace convocache::testing {

inline const std::vector<std::vector<std::string>>& topic_turns() {
  static const std::vector<std::vector<std::string>> topics = {
      {"hi how are you today", "i am fine thanks and you", "pretty good thanks for asking",
       "what have you been up to", "just working a lot lately", "that sounds tiring",
       "yes but the weekend is close", "enjoy your weekend then"},
      {"do you want to get some dinner", "sure where do you want to go", "how about the italian place",
       "i love their pasta", "great let us meet at seven", "see you at seven then", "should i book a table",
       "yes please book for two"},
      {"what is the weather like tomorrow", "it will rain all day", "i should bring an umbrella",
       "and a warm coat too", "is it going to be cold", "yes very cold and windy", "maybe i will stay home",
       "staying home sounds nice"},
      {"excuse me where is the train station", "go straight and turn left", "is it far from here",
       "about ten minutes on foot", "thank you very much", "you are welcome", "can i take a bus instead",
       "the bus stop is right there"},
      {"i would like to open a bank account", "sure do you have your passport", "yes here it is",
       "please fill in this form", "how long will it take", "about fifteen minutes",
       "do i need to pay a fee", "no the account is free"},
      {"did you watch the game last night", "yes it was amazing", "who do you think will win the cup",
       "our team has a good chance", "the striker played very well", "he scored two goals",
       "let us watch the next game together", "good idea i will bring snacks"},
      {"i am looking for a new apartment", "what area are you interested in", "somewhere near the city center",
       "rent there is quite expensive", "how much is a small flat", "around one thousand a month",
       "that is more than i hoped", "maybe look a bit further out"},
      {"can you help me with my homework", "sure what subject is it", "it is math about fractions",
       "fractions are not that hard", "i always get confused", "let me show you an example",
       "thank you that helps a lot", "practice makes perfect"},
  };
  return topics;
}

inline std::vector<std::string> synthetic_corpus_lines(std::size_t conversations, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& topics = topic_turns();
  std::vector<std::string> lines;
  for (std::size_t c = 0; c < conversations; ++c) {
    const auto& topic = topics[rng() % topics.size()];
    const std::size_t length = 2 + rng() % 6;
    std::size_t start = rng() % 3;
    std::ostringstream line;
    for (std::size_t t = 0; t < length; ++t) {
      std::size_t idx = (start + t) % topic.size();
      if (rng() % 5 == 0) idx = rng() % topic.size();  // occasional off-script turn
      std::string text = topic[idx];
      if (rng() % 4 == 0) text += (rng() % 2) ? " !" : " ?";
      line << text << " __eou__ ";
    }
    lines.push_back(line.str());
  }
  return lines;
}

inline std::vector<Conversation> synthetic_corpus(std::size_t conversations, std::uint64_t seed,
                                                  Split split = Split::train) {
  std::stringstream ss;
  for (const auto& l : synthetic_corpus_lines(conversations, seed)) ss << l << '\n';
  return parse_corpus(ss, split);
}

inline Embedding random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  Embedding v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = g(rng);
  return normalized(v);
}

/// Encoder returning a fixed number of values regardless of its declared dim.
class WrongLengthEncoder final : public Encoder {
 public:
  WrongLengthEncoder(std::size_t declared, std::size_t actual)
      : descriptor_("wrong-length", declared), actual_(actual) {}
  const EncoderDescriptor& descriptor() const noexcept override { return descriptor_; }
  std::vector<Embedding> encode_batch(std::span<const std::string> texts) override {
    return std::vector<Embedding>(texts.size(), Embedding::Ones(static_cast<Eigen::Index>(actual_)));
  }

 private:
  EncoderDescriptor descriptor_;
  std::size_t actual_;
};

/// Generator that counts calls and can be told to fail.
class CountingGenerator final : public Generator {
 public:
  const std::string& id() const noexcept override { return id_; }
  std::string produce(const DialogueHistory& history) override {
    ++calls;
    if (fail) throw std::runtime_error("generator down");
    return "generated reply " + std::to_string(calls) + " to " + history.last().text();
  }
  std::size_t calls = 0;
  bool fail = false;

 private:
  std::string id_ = "counting";
};

/// Scores candidates from a list, one per call, in order. Counts calls.
class ScriptedEvaluator final : public Evaluator {
 public:
  explicit ScriptedEvaluator(std::vector<double> scores) : scores_(std::move(scores)) {}
  const EvaluatorDescriptor& descriptor() const noexcept override { return descriptor_; }
  std::vector<double> score_batch(std::span<const EvaluationItem> items) override {
    std::vector<double> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
      if (fail_at && calls == *fail_at) throw EvaluatorUnavailable("scripted failure");
      out.push_back(scores_.at(calls++));
    }
    return out;
  }
  std::size_t calls = 0;
  std::optional<std::size_t> fail_at;

 private:
  EvaluatorDescriptor descriptor_{"scripted"};
  std::vector<double> scores_;
};

}  // namespace convocache::testing

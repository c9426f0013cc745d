#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace convocache {

/// Token that separates utterances in the DailyDialog distribution format.
inline constexpr std::string_view kEndOfUtterance = "__eou__";

std::string trim(std::string_view text);

/// One dialogue turn. Text is stored trimmed and is never empty.
class Utterance {
 public:
  explicit Utterance(std::string_view text, std::optional<int> speaker_index = std::nullopt);

  const std::string& text() const noexcept { return text_; }
  std::optional<int> speaker_index() const noexcept { return speaker_index_; }

  // Speaker is informational only.
  friend bool operator==(const Utterance& a, const Utterance& b) noexcept {
    return a.text_ == b.text_;
  }

 private:
  std::string text_;
  std::optional<int> speaker_index_;
};

/// Ordered utterances U_1..U_n, n >= 1. The last element is the most recent turn.
class DialogueHistory {
 public:
  explicit DialogueHistory(std::vector<Utterance> utterances);

  /// Convenience for tests and the HTTP layer.
  static DialogueHistory from_texts(std::span<const std::string> texts);
  static DialogueHistory from_texts(std::initializer_list<std::string_view> texts);

  std::span<const Utterance> utterances() const noexcept { return utterances_; }
  std::size_t size() const noexcept { return utterances_.size(); }
  const Utterance& last() const noexcept { return utterances_.back(); }
  const Utterance& operator[](std::size_t i) const { return utterances_.at(i); }

  std::vector<std::string> texts() const;

  friend bool operator==(const DialogueHistory&, const DialogueHistory&) = default;

 private:
  std::vector<Utterance> utterances_;
};

struct PromptResponsePair {
  DialogueHistory history;
  Utterance response;
};

struct EngineConfig {
  double lambda = 0.5;
  std::size_t k = 5;
  double threshold = 0.9;
  std::string encoder_id;
  std::string evaluator_id;

  /// Throws InvalidArgument on k == 0, threshold outside [0,1] or negative lambda.
  void validate() const;

  static EngineConfig make(double lambda, std::size_t k, double threshold,
                           std::string encoder_id = {}, std::string evaluator_id = {});
};

}  // namespace convocache

#include "convocache/types.hpp"

#include <cmath>

#include "convocache/errors.hpp"

namespace convocache {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EncoderUnavailable: return "EncoderUnavailable";
    case ErrorCode::EvaluatorUnavailable: return "EvaluatorUnavailable";
    case ErrorCode::GeneratorFailure: return "GeneratorFailure";
    case ErrorCode::ScoreOutOfRange: return "ScoreOutOfRange";
    case ErrorCode::GateError: return "GateError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::EncodingError: return "EncodingError";
  }
  return "Unknown";
}

std::string trim(std::string_view text) {
  constexpr std::string_view ws = " \t\n\r\f\v";
  const auto first = text.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(ws);
  return std::string(text.substr(first, last - first + 1));
}

Utterance::Utterance(std::string_view text, std::optional<int> speaker_index)
    : text_(trim(text)), speaker_index_(speaker_index) {
  if (text_.empty()) throw InvalidArgument("utterance text is empty after trimming");
  if (text_.find(kEndOfUtterance) != std::string::npos)
    throw InvalidArgument("utterance contains the end-of-utterance separator");
}

DialogueHistory::DialogueHistory(std::vector<Utterance> utterances)
    : utterances_(std::move(utterances)) {
  if (utterances_.empty()) throw InvalidArgument("dialogue history must hold at least one utterance");
}

DialogueHistory DialogueHistory::from_texts(std::span<const std::string> texts) {
  std::vector<Utterance> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.emplace_back(t);
  return DialogueHistory(std::move(out));
}

DialogueHistory DialogueHistory::from_texts(std::initializer_list<std::string_view> texts) {
  std::vector<Utterance> out;
  out.reserve(texts.size());
  for (auto t : texts) out.emplace_back(t);
  return DialogueHistory(std::move(out));
}

std::vector<std::string> DialogueHistory::texts() const {
  std::vector<std::string> out;
  out.reserve(utterances_.size());
  for (const auto& u : utterances_) out.push_back(u.text());
  return out;
}

void EngineConfig::validate() const {
  if (k < 1) throw InvalidArgument("k must be >= 1");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw InvalidArgument("threshold must lie in [0, 1]");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be finite and >= 0");
}

EngineConfig EngineConfig::make(double lambda, std::size_t k, double threshold,
                                std::string encoder_id, std::string evaluator_id) {
  EngineConfig c{lambda, k, threshold, std::move(encoder_id), std::move(evaluator_id)};
  c.validate();
  return c;
}

}  // namespace convocache

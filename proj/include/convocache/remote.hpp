#pragma once

#include <json.hpp>

#include <chrono>
#include <span>
#include <string>
#include <vector>

#include "convocache/coherence.hpp"
#include "convocache/engine.hpp"

namespace convocache {

/// JSON bodies of the model sidecar protocol (HTTP/JSON).
namespace wire {

nlohmann::ordered_json encode_request(std::span<const std::string> texts);
/// Checks |embeddings| == expected_count and each length == dim.
std::vector<Embedding> parse_encode_response(const nlohmann::json& body, std::size_t expected_count,
                                             std::size_t expected_dim);

nlohmann::ordered_json evaluate_request(std::span<const EvaluationItem> items, std::string_view question);
std::vector<double> parse_evaluate_response(const nlohmann::json& body, std::size_t expected_count);

struct Info {
  std::string model_id;
  std::size_t dim = 0;
  std::string evaluator_id;
  std::string question;
};
Info parse_info(const nlohmann::json& body);

nlohmann::ordered_json generate_request(const DialogueHistory& history);
std::string parse_generate_response(const nlohmann::json& body);

}  // namespace wire

struct RemoteOptions {
  std::chrono::milliseconds timeout{5000};
  std::size_t max_batch = 64;
};

/// Encoder served by a sidecar (GET /info, POST /encode). Reads /info at
/// construction; throws EncoderUnavailable if the sidecar is unreachable.
class RemoteEncoder final : public Encoder {
 public:
  explicit RemoteEncoder(std::string endpoint, RemoteOptions options = {});

  const EncoderDescriptor& descriptor() const noexcept override { return descriptor_; }
  std::vector<Embedding> encode_batch(std::span<const std::string> texts) override;
  bool thread_safe() const noexcept override { return true; }

 private:
  std::string endpoint_;
  RemoteOptions options_;
  EncoderDescriptor descriptor_;
};

/// Coherence evaluator served by a sidecar (GET /info, POST /evaluate).
class RemoteEvaluator final : public Evaluator {
 public:
  explicit RemoteEvaluator(std::string endpoint, RemoteOptions options = {});

  const EvaluatorDescriptor& descriptor() const noexcept override { return descriptor_; }
  std::vector<double> score_batch(std::span<const EvaluationItem> items) override;
  bool thread_safe() const noexcept override { return true; }

 private:
  std::string endpoint_;
  RemoteOptions options_;
  EvaluatorDescriptor descriptor_;
};

/// Response generator behind POST /generate {history} -> {text}.
class RemoteGenerator final : public Generator {
 public:
  explicit RemoteGenerator(std::string endpoint, RemoteOptions options = {});

  const std::string& id() const noexcept override { return id_; }
  std::string produce(const DialogueHistory& history) override;
  bool thread_safe() const noexcept override { return true; }

 private:
  std::string endpoint_;
  RemoteOptions options_;
  std::string id_;
};

/// Startup handshake: the store must have been built with an encoder of the same dimension.
void check_compatible(const CacheStore& store, const Encoder& encoder);

}  // namespace convocache

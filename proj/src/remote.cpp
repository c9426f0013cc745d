#include "convocache/remote.hpp"

#include <httplib.h>

namespace convocache {

namespace wire {

nlohmann::ordered_json encode_request(std::span<const std::string> texts) {
  return {{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
}

std::vector<Embedding> parse_encode_response(const nlohmann::json& body, std::size_t expected_count,
                                             std::size_t expected_dim) {
  if (!body.is_object() || !body.contains("embeddings") || !body["embeddings"].is_array())
    throw FormatError("encode response lacks an 'embeddings' array");
  if (body.contains("dim") && body["dim"].get<std::size_t>() != expected_dim)
    throw DimensionMismatch("sidecar reports dim " + body["dim"].dump() + ", expected " +
                            std::to_string(expected_dim));
  const auto& arr = body["embeddings"];
  if (arr.size() != expected_count)
    throw DimensionMismatch("sidecar returned " + std::to_string(arr.size()) + " embeddings for " +
                            std::to_string(expected_count) + " texts");
  std::vector<Embedding> out;
  out.reserve(arr.size());
  for (const auto& row : arr) {
    if (!row.is_array()) throw FormatError("embedding is not an array");
    if (row.size() != expected_dim)
      throw DimensionMismatch("sidecar embedding has " + std::to_string(row.size()) + " values, expected " +
                              std::to_string(expected_dim));
    Embedding e(static_cast<Eigen::Index>(expected_dim));
    for (std::size_t i = 0; i < expected_dim; ++i) {
      if (!row[i].is_number()) throw FormatError("embedding component is not a number");
      e[static_cast<Eigen::Index>(i)] = row[i].get<float>();
    }
    out.push_back(std::move(e));
  }
  return out;
}

nlohmann::ordered_json evaluate_request(std::span<const EvaluationItem> items, std::string_view question) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& item : items)
    arr.push_back({{"history", item.history->texts()}, {"response", std::string(item.response)}});
  return {{"items", arr}, {"question", std::string(question)}};
}

std::vector<double> parse_evaluate_response(const nlohmann::json& body, std::size_t expected_count) {
  if (!body.is_object() || !body.contains("scores") || !body["scores"].is_array())
    throw FormatError("evaluate response lacks a 'scores' array");
  const auto& arr = body["scores"];
  if (arr.size() != expected_count)
    throw FormatError("sidecar returned " + std::to_string(arr.size()) + " scores for " +
                      std::to_string(expected_count) + " items");
  std::vector<double> out;
  for (const auto& v : arr) {
    if (!v.is_number()) throw FormatError("score is not a number");
    out.push_back(v.get<double>());
  }
  return out;
}

Info parse_info(const nlohmann::json& body) {
  if (!body.is_object()) throw FormatError("info response is not an object");
  Info info;
  info.model_id = body.value("model_id", std::string{});
  info.dim = body.value("dim", std::size_t{0});
  info.evaluator_id = body.value("evaluator_id", std::string{});
  info.question = body.value("question", std::string(kDefaultCoherenceQuestion));
  return info;
}

nlohmann::ordered_json generate_request(const DialogueHistory& history) {
  return {{"history", history.texts()}};
}

std::string parse_generate_response(const nlohmann::json& body) {
  if (!body.is_object() || !body.contains("text") || !body["text"].is_string())
    throw FormatError("generate response lacks a 'text' string");
  return body["text"].get<std::string>();
}

}  // namespace wire

namespace {

template <typename Unavailable>
nlohmann::json call(const std::string& endpoint, const std::string& path, const std::string* body,
                    const RemoteOptions& options) {
  httplib::Client client(endpoint);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  auto res = body ? client.Post(path, *body, "application/json") : client.Get(path);
  if (!res) throw Unavailable(endpoint + path + " unreachable: " + httplib::to_string(res.error()));
  if (res->status >= 500) throw Unavailable(endpoint + path + " returned HTTP " + std::to_string(res->status));
  if (res->status != 200)
    throw InvalidArgument(endpoint + path + " rejected the request with HTTP " + std::to_string(res->status));
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(endpoint + path + " returned malformed JSON: " + e.what());
  }
}

EncoderDescriptor fetch_encoder_descriptor(const std::string& endpoint, const RemoteOptions& options) {
  const auto info = wire::parse_info(call<EncoderUnavailable>(endpoint, "/info", nullptr, options));
  if (info.model_id.empty() || info.dim == 0) throw FormatError("sidecar /info lacks model_id or dim");
  return EncoderDescriptor(info.model_id, info.dim);
}

EvaluatorDescriptor fetch_evaluator_descriptor(const std::string& endpoint, const RemoteOptions& options) {
  const auto info = wire::parse_info(call<EvaluatorUnavailable>(endpoint, "/info", nullptr, options));
  if (info.evaluator_id.empty()) throw FormatError("sidecar /info lacks evaluator_id");
  return EvaluatorDescriptor(info.evaluator_id, info.question);
}

}  // namespace

RemoteEncoder::RemoteEncoder(std::string endpoint, RemoteOptions options)
    : endpoint_(std::move(endpoint)), options_(options), descriptor_(fetch_encoder_descriptor(endpoint_, options_)) {
  if (options_.max_batch == 0) throw InvalidArgument("max_batch must be >= 1");
}

std::vector<Embedding> RemoteEncoder::encode_batch(std::span<const std::string> texts) {
  std::vector<Embedding> out;
  out.reserve(texts.size());
  for (std::size_t begin = 0; begin < texts.size(); begin += options_.max_batch) {
    const auto chunk = texts.subspan(begin, std::min(options_.max_batch, texts.size() - begin));
    const std::string body = wire::encode_request(chunk).dump();
    auto part = wire::parse_encode_response(call<EncoderUnavailable>(endpoint_, "/encode", &body, options_),
                                            chunk.size(), descriptor_.dim);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

RemoteEvaluator::RemoteEvaluator(std::string endpoint, RemoteOptions options)
    : endpoint_(std::move(endpoint)),
      options_(options),
      descriptor_(fetch_evaluator_descriptor(endpoint_, options_)) {}

std::vector<double> RemoteEvaluator::score_batch(std::span<const EvaluationItem> items) {
  std::vector<double> out;
  out.reserve(items.size());
  for (std::size_t begin = 0; begin < items.size(); begin += options_.max_batch) {
    const auto chunk = items.subspan(begin, std::min(options_.max_batch, items.size() - begin));
    const std::string body = wire::evaluate_request(chunk, descriptor_.question).dump();
    auto part = wire::parse_evaluate_response(call<EvaluatorUnavailable>(endpoint_, "/evaluate", &body, options_),
                                              chunk.size());
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

RemoteGenerator::RemoteGenerator(std::string endpoint, RemoteOptions options)
    : endpoint_(std::move(endpoint)), options_(options), id_("remote:" + endpoint_) {}

std::string RemoteGenerator::produce(const DialogueHistory& history) {
  const std::string body = wire::generate_request(history).dump();
  return wire::parse_generate_response(call<GeneratorFailure>(endpoint_, "/generate", &body, options_));
}

void check_compatible(const CacheStore& store, const Encoder& encoder) {
  if (store.dim() != encoder.dim())
    throw DimensionMismatch("store dim " + std::to_string(store.dim()) + " differs from encoder '" +
                            encoder.id() + "' dim " + std::to_string(encoder.dim()));
}

}  // namespace convocache

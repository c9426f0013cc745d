#include "convocache/service.hpp"

#include <httplib.h>

#include <fstream>

#include "convocache/harness.hpp"
#include "convocache/remote.hpp"

namespace convocache {

namespace {

std::string error_body(const Error& e) {
  return nlohmann::ordered_json{{"error", std::string(to_string(e.code()))}, {"message", e.what()}}.dump();
}

int status_for(const Error& e) {
  auto unavailable = [](ErrorCode c) {
    return c == ErrorCode::EncoderUnavailable || c == ErrorCode::EvaluatorUnavailable ||
           c == ErrorCode::GeneratorFailure;
  };
  if (unavailable(e.code())) return 503;
  if (const auto* g = dynamic_cast<const GateError*>(&e); g && unavailable(g->cause())) return 503;
  if (e.code() == ErrorCode::InvalidArgument) return 400;
  return 500;
}

}  // namespace

ServiceConfig ServiceConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidArgument("service config must be a JSON object");
  ServiceConfig c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    if (j.contains("snapshot")) c.snapshot = j["snapshot"].get<std::string>();
    c.snapshot_on_exit = j.value("snapshot_on_exit", c.snapshot_on_exit);
    c.frozen_cache = j.value("frozen_cache", c.frozen_cache);
    if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
    c.k = j.value("k", c.k);
    c.threshold = j.value("threshold", c.threshold);
    if (j.contains("encoder_endpoint")) c.encoder_endpoint = j["encoder_endpoint"].get<std::string>();
    if (j.contains("evaluator_endpoint")) c.evaluator_endpoint = j["evaluator_endpoint"].get<std::string>();
    if (j.contains("generator_endpoint")) c.generator_endpoint = j["generator_endpoint"].get<std::string>();
    c.reference_dim = j.value("reference_dim", c.reference_dim);
    c.reference_seed = j.value("reference_seed", c.reference_seed);
    c.echo_template = j.value("echo_template", c.echo_template);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(std::string("bad service config: ") + e.what());
  }
  if (c.port < 0 || c.port > 65535) throw InvalidArgument("port out of range");
  return c;
}

ServiceConfig ServiceConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open service config: " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument("service config is not valid JSON: " + std::string(e.what()));
  }
}

std::shared_ptr<CacheEngine> build_engine(const ServiceConfig& config) {
  std::shared_ptr<Encoder> base_encoder;
  if (config.encoder_endpoint)
    base_encoder = std::make_shared<RemoteEncoder>(*config.encoder_endpoint);
  else
    base_encoder = std::make_shared<ReferenceEncoder>(config.reference_dim, config.reference_seed);
  auto encoder = std::make_shared<MemoizingEncoder>(base_encoder);

  std::shared_ptr<CacheStore> store;
  if (config.snapshot && std::filesystem::exists(*config.snapshot)) {
    store = std::make_shared<CacheStore>(CacheStore::load_snapshot(*config.snapshot));
    check_compatible(*store, *encoder);
    if (store->info().encoder_id != encoder->id())
      throw InvalidArgument("snapshot was built with encoder '" + store->info().encoder_id + "', service uses '" +
                            encoder->id() + "'");
  } else {
    store = std::make_shared<CacheStore>(encoder->dim(), config.lambda.value_or(0.5), encoder->id());
  }
  const double lambda = config.lambda.value_or(store->info().lambda);

  std::shared_ptr<Evaluator> evaluator;
  if (config.evaluator_endpoint)
    evaluator = std::make_shared<RemoteEvaluator>(*config.evaluator_endpoint);
  else
    evaluator = std::make_shared<SimilarityProxyEvaluator>(encoder, lambda);

  std::shared_ptr<Generator> generator;
  if (config.generator_endpoint)
    generator = std::make_shared<RemoteGenerator>(*config.generator_endpoint);
  else
    generator = std::make_shared<EchoGenerator>(config.echo_template);

  EngineOptions options;
  options.append_on_miss = !config.frozen_cache;
  return std::make_shared<CacheEngine>(EngineConfig::make(lambda, config.k, config.threshold), store, encoder,
                                       evaluator, generator, options);
}

Service::Service(ServiceConfig config, std::shared_ptr<CacheEngine> engine)
    : config_(std::move(config)),
      engine_(std::move(engine)),
      server_(std::make_unique<httplib::Server>()),
      started_(std::chrono::steady_clock::now()) {
  server_->Post("/v1/respond", [this](const httplib::Request& req, httplib::Response& res) {
    auto reply = handle_respond(req.body);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
  server_->Get("/v1/stats", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(stats().dump(), "application/json");
  });
  server_->Get("/v1/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });
}

Service::~Service() = default;

int Service::bind() {
  if (config_.port == 0) {
    const int port = server_->bind_to_any_port(config_.host);
    if (port < 0) throw IoError("cannot bind " + config_.host);
    return port;
  }
  if (!server_->bind_to_port(config_.host, config_.port))
    throw IoError("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  return config_.port;
}

void Service::run() { server_->listen_after_bind(); }

void Service::stop() { server_->stop(); }

void Service::shutdown() {
  stop();
  if (config_.snapshot_on_exit && config_.snapshot && !saved_.exchange(true))
    engine_->store().save_snapshot(*config_.snapshot);
}

HttpReply Service::handle_respond(const std::string& body) {
  nlohmann::json request;
  try {
    request = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception&) {
    return {400, R"({"error":"InvalidArgument","message":"body is not valid JSON"})"};
  }
  auto bad = [](const std::string& msg) {
    return HttpReply{400, nlohmann::ordered_json{{"error", "InvalidArgument"}, {"message", msg}}.dump()};
  };
  if (!request.is_object() || !request.contains("history") || !request["history"].is_array())
    return bad("'history' must be an array of strings");
  const auto& history_json = request["history"];
  if (history_json.empty()) return bad("'history' must not be empty");
  std::vector<std::string> texts;
  for (const auto& item : history_json) {
    if (!item.is_string()) return bad("'history' must be an array of strings");
    texts.push_back(item.get<std::string>());
  }

  RespondOptions overrides;
  if (request.contains("k")) {
    if (!request["k"].is_number_integer() || request["k"].get<long long>() < 1)
      return bad("'k' must be a positive integer");
    overrides.k = request["k"].get<std::size_t>();
  }
  if (request.contains("threshold")) {
    if (!request["threshold"].is_number()) return bad("'threshold' must be a number in [0, 1]");
    overrides.threshold = request["threshold"].get<double>();
  }

  try {
    const auto history = DialogueHistory::from_texts(texts);
    auto response = engine_->respond(history, overrides);
    record(response);
    return {200, to_json(response).dump()};
  } catch (const Error& e) {
    return {status_for(e), error_body(e)};
  } catch (const std::exception& e) {
    return {500, nlohmann::ordered_json{{"error", "Internal"}, {"message", e.what()}}.dump()};
  }
}

void Service::record(const EngineResponse& response) {
  std::lock_guard lock(stats_mutex_);
  ++requests_;
  if (response.outcome == Outcome::hit) {
    ++hits_;
    ++per_rank_[*response.candidate_rank];
  } else {
    ++misses_;
  }
}

nlohmann::ordered_json Service::stats() const {
  const auto uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  std::lock_guard lock(stats_mutex_);
  nlohmann::ordered_json per_rank = nlohmann::ordered_json::object();
  for (const auto& [rank, count] : per_rank_) per_rank["rank_" + std::to_string(rank)] = count;
  per_rank["miss"] = misses_;
  return {{"store_size", engine_->store().size()},
          {"requests", requests_},
          {"hit_rate_running", requests_ ? static_cast<double>(hits_) / static_cast<double>(requests_) : 0.0},
          {"per_rank_counts", per_rank},
          {"uptime", uptime}};
}

}  // namespace convocache

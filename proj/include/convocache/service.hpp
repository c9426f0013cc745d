#pragma once

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "convocache/engine.hpp"

namespace httplib {
class Server;
}

namespace convocache {

/// Serving configuration. With no endpoints set the service runs hermetically:
/// reference encoder, similarity-proxy evaluator and echo generator.
struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> snapshot;
  bool snapshot_on_exit = false;
  bool frozen_cache = false;

  std::optional<double> lambda;  ///< defaults to the snapshot's lambda, else 0.5
  std::size_t k = 5;
  double threshold = 0.9;

  std::optional<std::string> encoder_endpoint;
  std::optional<std::string> evaluator_endpoint;
  std::optional<std::string> generator_endpoint;
  std::size_t reference_dim = 256;
  std::uint64_t reference_seed = 7;
  std::string echo_template = "{last}";

  static ServiceConfig from_json(const nlohmann::json& j);
  static ServiceConfig load(const std::filesystem::path& path);
};

/// Wires encoder, evaluator, generator and store from a config. Loads the
/// snapshot when it exists and refuses a store built with another encoder.
std::shared_ptr<CacheEngine> build_engine(const ServiceConfig& config);

struct HttpReply {
  int status = 200;
  std::string body;
};

/// HTTP front end: POST /v1/respond, GET /v1/stats, GET /v1/healthz.
class Service {
 public:
  Service(ServiceConfig config, std::shared_ptr<CacheEngine> engine);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the listening socket; port 0 picks a free port. Returns the bound port.
  int bind();
  /// Blocks serving requests until stop().
  void run();
  void stop();
  /// stop() plus the snapshot_on_exit save.
  void shutdown();

  HttpReply handle_respond(const std::string& body);
  nlohmann::ordered_json stats() const;

  CacheEngine& engine() noexcept { return *engine_; }

 private:
  void record(const EngineResponse& response);

  ServiceConfig config_;
  std::shared_ptr<CacheEngine> engine_;
  std::unique_ptr<httplib::Server> server_;
  std::chrono::steady_clock::time_point started_;

  mutable std::mutex stats_mutex_;
  std::uint64_t requests_ = 0;
  std::uint64_t hits_ = 0;
  std::uint64_t misses_ = 0;
  std::map<std::size_t, std::uint64_t> per_rank_;
  std::atomic<bool> saved_{false};
};

}  // namespace convocache

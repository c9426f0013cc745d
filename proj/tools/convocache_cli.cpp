// convocache: seed / replay / prefetch / sweep / serve / snapshot-info.

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <pthread.h>
#include <thread>

#include "convocache/harness.hpp"
#include "convocache/remote.hpp"
#include "convocache/service.hpp"

namespace cc = convocache;

namespace {

struct ModelFlags {
  std::string encoder_endpoint;
  std::string evaluator_endpoint;
  std::string generator_endpoint;
  std::string echo_template = "{last}";

  void add(CLI::App* app) {
    app->add_option("--encoder-endpoint", encoder_endpoint, "sidecar base URL for the encoder");
    app->add_option("--evaluator-endpoint", evaluator_endpoint, "sidecar base URL for the evaluator");
    app->add_option("--generator-endpoint", generator_endpoint, "base URL of a /generate service");
    app->add_option("--echo-template", echo_template, "echo generator template ({last}, {n})");
  }
};

struct ReplayFlags {
  std::string corpus;
  std::string snapshot;
  std::size_t k = 5;
  double threshold = 0.9;
  std::optional<double> lambda;
  bool frozen = false;
  bool no_timings = false;
  bool rerank_all = false;
  std::size_t threads = 1;
  std::string json_path;
  std::string log_path;
  std::optional<double> encode_ms, search_ms, eval_ms;
  ModelFlags models;

  void add(CLI::App* app) {
    app->add_option("--corpus", corpus, "test split, one conversation per line")->required()->check(CLI::ExistingFile);
    app->add_option("--snapshot", snapshot, "seeded cache snapshot")->required()->check(CLI::ExistingFile);
    app->add_option("--k", k, "candidates per request")->check(CLI::PositiveNumber);
    app->add_option("--threshold", threshold, "coherence threshold t")->check(CLI::Range(0.0, 1.0));
    app->add_option("--lambda", lambda, "decay (default: the snapshot's)")->check(CLI::NonNegativeNumber);
    app->add_flag("--frozen-cache", frozen, "do not append generated responses during replay");
    app->add_flag("--no-timings", no_timings, "omit wall-clock fields from JSON outputs");
    app->add_flag("--rerank-all", rerank_all, "evaluate all candidates and keep the best passing one");
    app->add_option("--threads", threads, "worker threads (frozen cache only)")->check(CLI::PositiveNumber);
    app->add_option("--json", json_path, "write the report JSON here");
    app->add_option("--log", log_path, "write the per-request NDJSON log here");
    app->add_option("--encode-ms", encode_ms, "latency model: encode time");
    app->add_option("--search-ms", search_ms, "latency model: search time");
    app->add_option("--eval-ms", eval_ms, "latency model: time per evaluation");
    models.add(app);
  }
};

struct Components {
  std::shared_ptr<cc::Encoder> encoder;
  std::shared_ptr<cc::Evaluator> evaluator;
  std::shared_ptr<cc::Generator> generator;
};

std::shared_ptr<cc::Encoder> make_encoder(const ModelFlags& m, std::string_view reference_id) {
  std::shared_ptr<cc::Encoder> base;
  if (!m.encoder_endpoint.empty())
    base = std::make_shared<cc::RemoteEncoder>(m.encoder_endpoint);
  else
    base = cc::ReferenceEncoder::from_id(reference_id);
  return std::make_shared<cc::MemoizingEncoder>(base);
}

Components make_components(const ModelFlags& m, const cc::CacheStore& store, double lambda) {
  Components c;
  c.encoder = make_encoder(m, store.info().encoder_id);
  cc::check_compatible(store, *c.encoder);
  if (c.encoder->id() != store.info().encoder_id)
    throw cc::InvalidArgument("snapshot was built with encoder '" + store.info().encoder_id + "', not '" +
                              c.encoder->id() + "'");
  if (!m.evaluator_endpoint.empty())
    c.evaluator = std::make_shared<cc::RemoteEvaluator>(m.evaluator_endpoint);
  else
    c.evaluator = std::make_shared<cc::SimilarityProxyEvaluator>(c.encoder, lambda);
  if (!m.generator_endpoint.empty())
    c.generator = std::make_shared<cc::RemoteGenerator>(m.generator_endpoint);
  else
    c.generator = std::make_shared<cc::EchoGenerator>(m.echo_template);
  return c;
}

cc::ReplayOptions replay_options(const ReplayFlags& f) {
  cc::ReplayOptions o;
  o.frozen_cache = f.frozen;
  o.threads = f.threads;
  o.policy = f.rerank_all ? cc::GatePolicy::rerank_all : cc::GatePolicy::first_pass;
  if (f.encode_ms || f.search_ms || f.eval_ms) {
    if (!(f.encode_ms && f.search_ms && f.eval_ms))
      throw cc::InvalidArgument("--encode-ms, --search-ms and --eval-ms must be given together");
    o.latency_model = cc::LatencyModel{*f.encode_ms, *f.search_ms, *f.eval_ms};
  }
  return o;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw cc::IoError("cannot write " + path);
  out << text;
  if (!out) throw cc::IoError("failed writing " + path);
}

void write_log_file(const std::string& path, std::span<const cc::RequestLog> log, bool timings) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw cc::IoError("cannot write " + path);
  cc::write_log(out, log, timings);
}

struct PreparedReplay {
  cc::CacheStore store;
  std::vector<cc::PromptResponsePair> pairs;
  cc::EngineConfig config;
  Components components;
};

PreparedReplay prepare(const ReplayFlags& f) {
  auto store = cc::CacheStore::load_snapshot(f.snapshot);
  const double lambda = f.lambda.value_or(store.info().lambda);
  auto components = make_components(f.models, store, lambda);
  auto pairs = cc::extract_pairs(cc::parse_corpus(f.corpus, cc::Split::test));
  if (pairs.empty()) throw cc::InvalidArgument("test corpus yields no prompt-response pairs");
  auto config = cc::EngineConfig::make(lambda, f.k, f.threshold, components.encoder->id(), components.evaluator->id());
  return PreparedReplay{std::move(store), std::move(pairs), std::move(config), std::move(components)};
}

int cmd_replay(const ReplayFlags& f) {
  auto p = prepare(f);
  auto& c = p.components;
  const auto result = cc::replay(p.pairs, p.config, p.store, *c.encoder, *c.evaluator, *c.generator, replay_options(f));
  std::cout << cc::format_table(result.report);
  if (!f.json_path.empty()) write_text(f.json_path, cc::to_json(result.report, !f.no_timings).dump(2) + "\n");
  if (!f.log_path.empty()) write_log_file(f.log_path, result.log, !f.no_timings);
  return 0;
}

std::vector<double> parse_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (cc::trim(item.substr(used)).size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw cc::InvalidArgument("not a number list: " + csv);
    }
  }
  if (out.empty()) throw cc::InvalidArgument("empty list");
  return out;
}

int cmd_prefetch(const ReplayFlags& f, const std::string& splits_csv) {
  const auto splits = parse_list(splits_csv);
  auto p = prepare(f);
  auto& c = p.components;
  const auto reports =
      cc::prefetch_replay(p.pairs, p.config, splits, p.store, *c.encoder, *c.evaluator, *c.generator, replay_options(f));
  std::cout << cc::format_prefetch_table(reports);
  if (!f.json_path.empty()) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& r : reports)
      arr.push_back({{"split", r.split}, {"report", cc::to_json(r.result.report, !f.no_timings)}});
    write_text(f.json_path, nlohmann::ordered_json{{"splits", arr}}.dump(2) + "\n");
  }
  if (!f.log_path.empty()) {
    std::ofstream out(f.log_path, std::ios::binary | std::ios::trunc);
    if (!out) throw cc::IoError("cannot write " + f.log_path);
    for (const auto& r : reports)
      for (const auto& entry : r.result.log) {
        auto j = cc::to_json(entry, !f.no_timings);
        j["split"] = r.split;
        out << j.dump() << '\n';
      }
  }
  return 0;
}

int cmd_seed(const std::string& corpus, double lambda, const std::string& out, std::size_t dim, std::uint64_t seed,
             const ModelFlags& models) {
  auto encoder = make_encoder(models, cc::ReferenceEncoder::make_id(dim, seed));
  const auto pairs = cc::extract_pairs(cc::parse_corpus(corpus, cc::Split::train));
  cc::CacheStore store(encoder->dim(), lambda, encoder->id());
  const auto n = cc::seed(pairs, lambda, store, *encoder);
  store.save_snapshot(out);
  std::cout << "seeded " << n << " pairs\n";
  return 0;
}

int cmd_sweep(const std::string& train, const std::string& test, const std::string& lambdas_csv, std::size_t k,
              double threshold, std::size_t dim, std::uint64_t seed, const std::string& json_path, bool no_timings,
              const ModelFlags& models) {
  const auto lambdas = parse_list(lambdas_csv);
  auto encoder = make_encoder(models, cc::ReferenceEncoder::make_id(dim, seed));
  const auto train_pairs = cc::extract_pairs(cc::parse_corpus(train, cc::Split::train));
  const auto test_pairs = cc::extract_pairs(cc::parse_corpus(test, cc::Split::test));
  auto arr = nlohmann::ordered_json::array();
  for (double lambda : lambdas) {
    std::shared_ptr<cc::Evaluator> evaluator;
    if (!models.evaluator_endpoint.empty())
      evaluator = std::make_shared<cc::RemoteEvaluator>(models.evaluator_endpoint);
    else
      evaluator = std::make_shared<cc::SimilarityProxyEvaluator>(encoder, lambda);
    cc::EchoGenerator generator(models.echo_template);
    const double one[] = {lambda};
    auto rows = cc::lambda_sweep(train_pairs, test_pairs, cc::EngineConfig::make(lambda, k, threshold), one, *encoder,
                                 *evaluator, generator, cc::ReplayOptions{});
    std::cout << cc::format_table(rows.front().result.report);
    arr.push_back(cc::to_json(rows.front().result.report, !no_timings));
  }
  if (!json_path.empty()) write_text(json_path, nlohmann::ordered_json{{"sweep", arr}}.dump(2) + "\n");
  return 0;
}

int cmd_snapshot_info(const std::string& path) {
  const auto h = cc::CacheStore::read_snapshot_header(path);
  std::cout << "version " << h.version << "\n"
            << "dim " << h.dim << "\n"
            << "count " << h.count << "\n"
            << "lambda " << h.lambda << "\n"
            << "encoder_id " << h.encoder_id << "\n";
  return 0;
}

int cmd_serve(const std::string& config_path, bool snapshot_on_exit) {
  auto config = cc::ServiceConfig::load(config_path);
  if (snapshot_on_exit) config.snapshot_on_exit = true;

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  cc::Service service(config, cc::build_engine(config));
  const int port = service.bind();
  std::cout << "listening on " << config.host << ":" << port << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    service.shutdown();
  });
  service.run();
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  service.shutdown();
  return 0;
}

void report_error(std::string_view code, std::string_view message) {
  std::cerr << nlohmann::ordered_json{{"error", code}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conversational response cache: seeding, replay and serving"};
  app.require_subcommand(1);

  std::string corpus, out, train, test;
  double lambda = 0.5;
  std::size_t dim = 256;
  std::uint64_t seed = 7;
  ModelFlags seed_models;
  auto* seed_cmd = app.add_subcommand("seed", "encode a train split into a cache snapshot");
  seed_cmd->add_option("--corpus", corpus, "train split")->required()->check(CLI::ExistingFile);
  seed_cmd->add_option("--lambda", lambda, "decay")->check(CLI::NonNegativeNumber);
  seed_cmd->add_option("--out", out, "snapshot path")->required();
  seed_cmd->add_option("--dim", dim, "reference encoder dimension")->check(CLI::Range(8, 1 << 20));
  seed_cmd->add_option("--seed", seed, "reference encoder hash seed");
  seed_models.add(seed_cmd);

  ReplayFlags replay_flags;
  auto* replay_cmd = app.add_subcommand("replay", "respond to a test split and report rank usage");
  replay_flags.add(replay_cmd);

  ReplayFlags prefetch_flags;
  std::string splits = "1.0,0.9,0.8,0.7,0.6";
  auto* prefetch_cmd = app.add_subcommand("prefetch", "replay with truncated last utterances");
  prefetch_flags.add(prefetch_cmd);
  prefetch_cmd->add_option("--splits", splits, "comma-separated fractions in (0, 1]");

  std::string lambdas = "0.25,0.5,0.75,1.0";
  std::size_t sweep_k = 5;
  double sweep_t = 0.9;
  std::string sweep_json;
  bool sweep_no_timings = false;
  ModelFlags sweep_models;
  auto* sweep_cmd = app.add_subcommand("sweep", "reseed and replay for several lambdas");
  sweep_cmd->add_option("--train", train, "train split")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--test", test, "test split")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--lambdas", lambdas, "comma-separated lambdas");
  sweep_cmd->add_option("--k", sweep_k)->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--threshold", sweep_t)->check(CLI::Range(0.0, 1.0));
  sweep_cmd->add_option("--dim", dim)->check(CLI::Range(8, 1 << 20));
  sweep_cmd->add_option("--seed", seed);
  sweep_cmd->add_option("--json", sweep_json);
  sweep_cmd->add_flag("--no-timings", sweep_no_timings);
  sweep_models.add(sweep_cmd);

  std::string config_path;
  bool snapshot_on_exit = false;
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP service");
  serve_cmd->add_option("--config", config_path, "service config JSON")->required()->check(CLI::ExistingFile);
  serve_cmd->add_flag("--snapshot-on-exit", snapshot_on_exit, "save the store to the configured snapshot on exit");

  std::string info_path;
  auto* info_cmd = app.add_subcommand("snapshot-info", "print snapshot header fields");
  info_cmd->add_option("path", info_path)->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("Usage", e.what());
    return 1;
  }

  try {
    if (*seed_cmd) return cmd_seed(corpus, lambda, out, dim, seed, seed_models);
    if (*replay_cmd) return cmd_replay(replay_flags);
    if (*prefetch_cmd) return cmd_prefetch(prefetch_flags, splits);
    if (*sweep_cmd)
      return cmd_sweep(train, test, lambdas, sweep_k, sweep_t, dim, seed, sweep_json, sweep_no_timings, sweep_models);
    if (*serve_cmd) return cmd_serve(config_path, snapshot_on_exit);
    if (*info_cmd) return cmd_snapshot_info(info_path);
  } catch (const cc::Error& e) {
    report_error(cc::to_string(e.code()), e.what());
    return 2;
  } catch (const std::exception& e) {
    report_error("Internal", e.what());
    return 2;
  }
  return 1;
}

// Command-line front end. Talks to the library only through keep.h.
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "keep/keep.h"

namespace {

struct Flag {
  std::string key;
  std::string value;
  bool set = false;
};

// Flags that feed config keys. Anything without a dedicated flag goes
// through --set key=value or a --config file.
struct Params {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, Flag> flags;  // by option name

  void bind(CLI::App* app, const std::string& name, const std::string& key,
            const std::string& help) {
    auto& f = flags[name];
    f.key = key;
    app->add_option("--" + name, f.value, help)->each([&f](const std::string&) { f.set = true; });
  }

  void common(CLI::App* app) {
    app->add_option("--config", config_file, "key = value file supplying defaults");
    app->add_option("--set", sets, "extra config entry key=value (repeatable)");
  }
};

int fail(keep_status s) {
  std::cerr << "error: " << keep_status_name(s) << ": " << keep_last_error() << "\n";
  return 2;
}

void log_to_stderr(const char* line, void*) { std::cerr << line << "\n"; }

// Builds the config: file first, then --set entries, then dedicated flags.
keep_status make_config(const Params& p, keep_config** out) {
  keep_status s = p.config_file.empty() ? keep_config_new(out)
                                        : keep_config_load(p.config_file.c_str(), out);
  if (s != KEEP_OK) return s;
  for (const auto& kv : p.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key=value, got '" << kv << "'\n";
      keep_config_free(*out);
      *out = nullptr;
      return KEEP_ERR_INVALID_ARGUMENT;
    }
    s = keep_config_set(*out, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (s != KEEP_OK) break;
  }
  for (const auto& [name, f] : p.flags) {
    if (s != KEEP_OK) break;
    if (f.set) s = keep_config_set(*out, f.key.c_str(), f.value.c_str());
  }
  if (s != KEEP_OK) {
    keep_config_free(*out);
    *out = nullptr;
  }
  return s;
}

using Op = keep_status (*)(const keep_config*, char**);

int run_op(const Params& p, Op op) {
  keep_config* cfg = nullptr;
  auto s = make_config(p, &cfg);
  if (s != KEEP_OK) return fail(s);
  char* summary = nullptr;
  s = op(cfg, &summary);
  keep_config_free(cfg);
  if (s != KEEP_OK) return fail(s);
  std::cout << summary << "\n";
  keep_string_free(summary);
  return 0;
}

int run_experiment(const Params& p, const std::string& json_out) {
  keep_config* cfg = nullptr;
  auto s = make_config(p, &cfg);
  if (s != KEEP_OK) return fail(s);
  char* text = nullptr;
  char* json = nullptr;
  int passed = 0;
  s = keep_experiment(cfg, &text, &json, &passed);
  keep_config_free(cfg);
  if (s != KEEP_OK) return fail(s);
  std::cout << text;
  if (!json_out.empty()) {
    if (FILE* f = std::fopen(json_out.c_str(), "w")) {
      std::fputs(json, f);
      std::fclose(f);
    } else {
      std::cerr << "error: cannot write " << json_out << "\n";
      passed = 0;
    }
  }
  keep_string_free(text);
  keep_string_free(json);
  return passed ? 0 : 1;
}

int run_serve(const std::string& dir, const std::string& host, int port, int max_versions) {
  // Block the signals before any server thread exists so only sigwait sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  keep_server* server = nullptr;
  const auto s = keep_server_start(dir.c_str(), host.c_str(), static_cast<uint16_t>(port),
                                   static_cast<size_t>(max_versions), &server);
  if (s != KEEP_OK) return fail(s);
  std::cout << "listening on " << host << ":" << keep_server_port(server) << std::endl;
  int sig = 0;
  sigwait(&set, &sig);
  std::vector<uint32_t> versions(static_cast<size_t>(max_versions));
  versions.resize(keep_server_versions(server, versions.data(), versions.size()));
  keep_server_stop(server);
  std::cerr << "stopped; retained versions:";
  for (auto v : versions) std::cerr << " " << v;
  std::cerr << "\n";
  return 0;
}

int run_publish(const std::string& endpoint, unsigned version, const std::string& path) {
  keep_client* c = nullptr;
  auto s = keep_client_connect(endpoint.c_str(), &c);
  if (s != KEEP_OK) return fail(s);
  uint32_t accepted = 0;
  s = keep_client_publish(c, version, path.c_str(), &accepted);
  keep_client_close(c);
  if (s != KEEP_OK) return fail(s);
  std::cout << "{\"published\":" << accepted << "}\n";
  return 0;
}

// Each quad is "user,item,category,version".
int run_lookup(const std::string& endpoint, const std::vector<std::string>& quads) {
  std::vector<keep_quadruple> batch;
  for (const auto& q : quads) {
    keep_quadruple k{};
    unsigned long long u = 0, i = 0;
    unsigned c = 0, v = 0;
    char tail = 0;
    if (std::sscanf(q.c_str(), "%llu,%llu,%u,%u%c", &u, &i, &c, &v, &tail) != 4) {
      std::cerr << "error: --quad expects user,item,category,version, got '" << q << "'\n";
      return 2;
    }
    k.user = u;
    k.item = i;
    k.category = c;
    k.version = v;
    batch.push_back(k);
  }
  keep_client* client = nullptr;
  auto s = keep_client_connect(endpoint.c_str(), &client);
  if (s != KEEP_OK) return fail(s);
  uint32_t dim = 0;
  std::vector<uint8_t> status(batch.size()), found(batch.size());
  s = keep_client_lookup(client, batch.data(), batch.size(), &dim, status.data(), found.data(),
                         nullptr, 0);
  std::vector<float> values;
  if (s == KEEP_OK) {
    values.resize(static_cast<size_t>(dim) * batch.size());
    s = keep_client_lookup(client, batch.data(), batch.size(), &dim, status.data(), found.data(),
                           values.data(), values.size());
  }
  keep_client_close(client);
  if (s != KEEP_OK) return fail(s);
  for (size_t k = 0; k < batch.size(); ++k) {
    std::cout << "{\"status\":" << int(status[k]) << ",\"found\":" << int(found[k])
              << ",\"values\":[";
    for (uint32_t d = 0; d < dim; ++d) {
      std::cout << (d ? "," : "") << values[k * dim + d];
    }
    std::cout << "]}\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"KEEP knowledge extraction and plugging toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress lines");

  Params gen_p, pre_p, train_p, snap_p, exp_p;

  auto* gen = app.add_subcommand("gen", "generate synthetic super/sub-domain logs");
  gen_p.common(gen);
  gen_p.bind(gen, "out-super", "super_log", "super-domain log path");
  gen_p.bind(gen, "out-sub", "sub_log", "sub-domain log path");
  for (const char* f : {"n-users", "n-items", "n-categories", "n-shops", "n-days", "super-rate",
                        "sub-rate", "activity-sigma", "latent-dim", "preference-scale",
                        "item-noise", "category-bias-std", "drift-rate", "sub-domain-shift",
                        "sub-item-fraction", "click-rate", "conversion-given-click",
                        "cart-given-click", "max-behaviors", "max-session-length", "seed"}) {
    std::string key = f;
    for (auto& ch : key) ch = ch == '-' ? '_' : ch;
    gen_p.bind(gen, f, "gen." + key, "generator " + key);
  }

  auto* pre = app.add_subcommand("pretrain", "pre-train an extractor on the super-domain log");
  pre_p.common(pre);
  pre_p.bind(pre, "super-log", "super_log", "super-domain log");
  pre_p.bind(pre, "out", "out", "checkpoint to write");
  pre_p.bind(pre, "days", "days", "day window, e.g. 0-4");
  pre_p.bind(pre, "model", "model", "full | degenerated | two_tower");
  pre_p.bind(pre, "tasks", "tasks", "comma list of click,conversion,cart");
  pre_p.bind(pre, "resume", "resume", "checkpoint to continue from");
  pre_p.bind(pre, "batch", "batch", "impressions per step");
  pre_p.bind(pre, "lr", "lr", "Adam learning rate");
  pre_p.bind(pre, "seed", "seed", "initialization and shuffling seed");

  auto* train = app.add_subcommand("train", "train a downstream model on the sub-domain log");
  train_p.common(train);
  train_p.bind(train, "sub-log", "sub_log", "sub-domain log");
  train_p.bind(train, "super-log", "super_log", "super-domain log (merge, keep-c)");
  train_p.bind(train, "mode", "mode", "base | merge | keep | keep-c");
  train_p.bind(train, "plug-layer", "plug_layer", "MLP layer receiving the knowledge");
  train_p.bind(train, "knowledge", "knowledge", "extractor checkpoint or gkc:host:port");
  train_p.bind(train, "version", "version", "knowledge snapshot version");
  train_p.bind(train, "days", "days", "training day window, e.g. 5-6");
  train_p.bind(train, "test-day", "test_day", "day evaluated after training");
  train_p.bind(train, "resume", "resume", "checkpoint to continue from");
  train_p.bind(train, "out", "out", "checkpoint to write");
  train_p.bind(train, "batch", "batch", "impressions per step");
  train_p.bind(train, "lr", "lr", "Adam learning rate");
  train_p.bind(train, "seed", "seed", "initialization and shuffling seed");

  auto* snap = app.add_subcommand("snapshot", "build a knowledge snapshot file");
  snap_p.common(snap);
  snap_p.bind(snap, "super-log", "super_log", "super-domain log");
  snap_p.bind(snap, "sub-log", "sub_log", "sub-domain log");
  snap_p.bind(snap, "two-tower", "two_tower", "two-tower checkpoint");
  snap_p.bind(snap, "degenerated", "degenerated", "degenerated extractor checkpoint");
  snap_p.bind(snap, "day", "day", "last day of behaviour included");
  snap_p.bind(snap, "version", "version", "snapshot version");
  snap_p.bind(snap, "out", "out", "snapshot file to write");

  std::string snapshot_dir = ".", host = "127.0.0.1";
  int port = 7070, max_versions = 5;
  auto* serve = app.add_subcommand("serve", "run the knowledge cache service");
  serve->add_option("--snapshot-dir", snapshot_dir, "directory of *.ksnp files")->required();
  serve->add_option("--port", port, "TCP port (0 picks one)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "bind address");
  serve->add_option("--max-versions", max_versions, "versions retained")->check(CLI::PositiveNumber);

  std::string endpoint, path;
  unsigned version = 0;
  auto* publish = app.add_subcommand("publish", "ask a running service to load a snapshot");
  publish->add_option("--endpoint", endpoint, "host:port")->required();
  publish->add_option("--version", version, "snapshot version")->required();
  publish->add_option("--path", path, "snapshot file name inside the service's directory")->required();

  std::vector<std::string> quads;
  auto* lookup = app.add_subcommand("lookup", "query a running service");
  lookup->add_option("--endpoint", endpoint, "host:port")->required();
  lookup->add_option("--quad", quads, "user,item,category,version (repeatable)")->required();

  std::string json_out;
  auto* exp = app.add_subcommand("experiment", "run the evaluation grid and acceptance checks");
  exp_p.common(exp);
  exp->get_option("--config")->required();
  exp->add_option("--json", json_out, "also write the JSON report here");

  CLI11_PARSE(app, argc, argv);
  if (!quiet) keep_set_log_callback(log_to_stderr, nullptr);

  if (*gen) return run_op(gen_p, keep_generate);
  if (*pre) return run_op(pre_p, keep_pretrain);
  if (*train) return run_op(train_p, keep_train);
  if (*snap) return run_op(snap_p, keep_build_snapshot);
  if (*serve) return run_serve(snapshot_dir, host, port, max_versions);
  if (*publish) return run_publish(endpoint, version, path);
  if (*lookup) return run_lookup(endpoint, quads);
  if (*exp) return run_experiment(exp_p, json_out);
  return 1;
}

#include "keep/keep.h"

#include <cmath>
#include <cstring>
#include <memory>
#include <mutex>
#include <new>
#include <sstream>
#include <string>

#include "keep/app/commands.hpp"
#include "keep/error.hpp"
#include "keep/gkc/net.hpp"
#include "keep/gkc/store.hpp"
#include "keep/harness/experiment.hpp"
#include "keep/harness/gauc.hpp"
#include "keep/kv.hpp"
#include "keep/serving/snapshot.hpp"

struct keep_config {
  keep::KeyValues kv;
};

struct keep_server {
  std::unique_ptr<keep::gkc::VersionStore> store;
  std::unique_ptr<keep::gkc::Server> server;
};

struct keep_client {
  std::unique_ptr<keep::gkc::Client> client;
};

namespace {

thread_local std::string g_last_error;

std::mutex g_log_mu;
keep_log_fn g_log_fn = nullptr;
void* g_log_user = nullptr;

void emit(const std::string& line) {
  std::lock_guard lock(g_log_mu);
  if (g_log_fn != nullptr) g_log_fn(line.c_str(), g_log_user);
}

keep::app::LogFn logger() {
  return [](const std::string& line) { emit(line); };
}

// Forwards complete lines written to it to the log callback.
class LogBuf : public std::stringbuf {
 protected:
  int sync() override {
    auto text = str();
    std::size_t start = 0;
    for (auto nl = text.find('\n'); nl != std::string::npos; nl = text.find('\n', start)) {
      emit(text.substr(start, nl - start));
      start = nl + 1;
    }
    str(text.substr(start));
    return 0;
  }
};

keep_status to_status(keep::ErrorCode c) {
  switch (c) {
    case keep::ErrorCode::kShape: return KEEP_ERR_SHAPE;
    case keep::ErrorCode::kState: return KEEP_ERR_STATE;
    case keep::ErrorCode::kNumeric: return KEEP_ERR_NUMERIC;
    case keep::ErrorCode::kConfig: return KEEP_ERR_CONFIG;
    case keep::ErrorCode::kIo: return KEEP_ERR_IO;
    case keep::ErrorCode::kProtocol: return KEEP_ERR_PROTOCOL;
    case keep::ErrorCode::kManifest: return KEEP_ERR_MANIFEST;
    case keep::ErrorCode::kVersion: return KEEP_ERR_VERSION;
    case keep::ErrorCode::kInvalidArgument: return KEEP_ERR_INVALID_ARGUMENT;
  }
  return KEEP_ERR_INTERNAL;
}

template <class F>
keep_status guarded(F&& f) {
  try {
    f();
    return KEEP_OK;
  } catch (const keep::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return KEEP_ERR_INTERNAL;
}

char* dup_string(const std::string& s) {
  auto* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void need(const void* p, const char* what) {
  if (p == nullptr) throw keep::InvalidArgument(std::string(what) + " must not be NULL");
}

// A private copy, so read-tracking for unknown keys starts fresh per call.
keep::KeyValues fresh_copy(const keep_config* cfg) {
  need(cfg, "config");
  return keep::KeyValues::parse(cfg->kv.to_text());
}

template <class Fn>
keep_status run_command(const keep_config* cfg, char** summary, Fn fn) {
  return guarded([&] {
    const auto kv = fresh_copy(cfg);
    const auto text = fn(kv, logger());
    if (summary != nullptr) *summary = dup_string(text);
  });
}

}  // namespace

extern "C" {

const char* keep_last_error(void) { return g_last_error.c_str(); }

const char* keep_status_name(keep_status s) {
  switch (s) {
    case KEEP_OK: return "ok";
    case KEEP_ERR_SHAPE: return "shape error";
    case KEEP_ERR_STATE: return "state error";
    case KEEP_ERR_NUMERIC: return "numeric error";
    case KEEP_ERR_CONFIG: return "config error";
    case KEEP_ERR_IO: return "io error";
    case KEEP_ERR_PROTOCOL: return "protocol error";
    case KEEP_ERR_MANIFEST: return "manifest error";
    case KEEP_ERR_VERSION: return "version error";
    case KEEP_ERR_INVALID_ARGUMENT: return "invalid argument";
    case KEEP_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void keep_string_free(char* s) { std::free(s); }

void keep_set_log_callback(keep_log_fn fn, void* user) {
  std::lock_guard lock(g_log_mu);
  g_log_fn = fn;
  g_log_user = user;
}

keep_status keep_config_new(keep_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new keep_config{};
  });
}

keep_status keep_config_load(const char* path, keep_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new keep_config{keep::KeyValues::load(path)};
  });
}

keep_status keep_config_parse(const char* text, keep_config** out) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    *out = new keep_config{keep::KeyValues::parse(text)};
  });
}

keep_status keep_config_set(keep_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    cfg->kv.set(key, value);
  });
}

void keep_config_free(keep_config* cfg) { delete cfg; }

keep_status keep_generate(const keep_config* cfg, char** summary_json) {
  return run_command(cfg, summary_json, keep::app::generate);
}

keep_status keep_pretrain(const keep_config* cfg, char** summary_json) {
  return run_command(cfg, summary_json, keep::app::pretrain);
}

keep_status keep_train(const keep_config* cfg, char** summary_json) {
  return run_command(cfg, summary_json, keep::app::train);
}

keep_status keep_build_snapshot(const keep_config* cfg, char** summary_json) {
  return run_command(cfg, summary_json, keep::app::build_snapshot);
}

keep_status keep_experiment(const keep_config* cfg, char** report_text, char** report_json,
                            int* passed) {
  return guarded([&] {
    const auto config = keep::harness::ExperimentConfig::from_kv(fresh_copy(cfg));
    LogBuf buf;
    std::ostream progress(&buf);
    const auto result = keep::harness::run_experiment(config, &progress);
    progress.flush();
    if (report_text != nullptr) *report_text = dup_string(keep::harness::render_report(config, result));
    if (report_json != nullptr) *report_json = dup_string(keep::harness::render_json(config, result));
    if (passed != nullptr) *passed = result.all_checks_passed() ? 1 : 0;
  });
}

keep_status keep_server_start(const char* snapshot_dir, const char* host, uint16_t port,
                              size_t max_versions, keep_server** out) {
  return guarded([&] {
    need(snapshot_dir, "snapshot_dir");
    need(out, "out");
    if (max_versions == 0) throw keep::InvalidArgument("max_versions must be > 0");
    auto s = std::make_unique<keep_server>();
    s->store = std::make_unique<keep::gkc::VersionStore>(max_versions);
    const auto loaded = keep::gkc::load_snapshot_dir(*s->store, snapshot_dir);
    s->server = std::make_unique<keep::gkc::Server>(*s->store, snapshot_dir, port,
                                                    host ? host : "127.0.0.1");
    s->server->start();
    emit("serving " + std::to_string(loaded) + " snapshot(s) from " + snapshot_dir + " on port " +
         std::to_string(s->server->port()));
    *out = s.release();
  });
}

uint16_t keep_server_port(const keep_server* s) { return s ? s->server->port() : 0; }

size_t keep_server_versions(const keep_server* s, uint32_t* out, size_t cap) {
  if (s == nullptr) return 0;
  const auto vs = s->store->versions();
  const size_t n = std::min(cap, vs.size());
  for (size_t k = 0; k < n && out != nullptr; ++k) out[k] = vs[k];
  return n;
}

void keep_server_stop(keep_server* s) {
  if (s == nullptr) return;
  s->server->stop();
  delete s;
}

keep_status keep_client_connect(const char* endpoint, keep_client** out) {
  return guarded([&] {
    need(endpoint, "endpoint");
    need(out, "out");
    const auto [host, port] = keep::gkc::parse_endpoint(endpoint);
    auto c = std::make_unique<keep_client>();
    c->client = std::make_unique<keep::gkc::Client>(host, port);
    *out = c.release();
  });
}

void keep_client_close(keep_client* c) { delete c; }

keep_status keep_client_publish(keep_client* c, uint32_t version, const char* path,
                                uint32_t* accepted) {
  return guarded([&] {
    need(c, "client");
    need(path, "path");
    const auto v = c->client->publish(version, path);
    if (accepted != nullptr) *accepted = v;
  });
}

keep_status keep_client_lookup(keep_client* c, const keep_quadruple* batch, size_t n,
                               uint32_t* dim_total, uint8_t* status, uint8_t* found_mask,
                               float* values, size_t values_cap) {
  return guarded([&] {
    need(c, "client");
    if (n > 0) need(batch, "batch");
    std::vector<keep::gkc::Quadruple> q(n);
    for (size_t k = 0; k < n; ++k) {
      q[k] = {batch[k].user, batch[k].item, batch[k].category, batch[k].version};
    }
    const auto resp = c->client->lookup(q);
    if (dim_total != nullptr) *dim_total = resp.dim_total;
    for (size_t k = 0; k < n; ++k) {
      if (status != nullptr) status[k] = static_cast<uint8_t>(resp.status[k]);
      if (found_mask != nullptr) found_mask[k] = resp.found_mask[k];
    }
    if (values != nullptr) {
      if (values_cap < resp.values.size()) {
        throw keep::ShapeError("values buffer holds " + std::to_string(values_cap) +
                               " floats, response needs " + std::to_string(resp.values.size()));
      }
      std::copy(resp.values.begin(), resp.values.end(), values);
    }
  });
}

keep_status keep_count_cache_entries(uint64_t n_users, uint64_t n_items,
                                     uint64_t n_user_category_pairs, uint64_t* pairwise,
                                     uint64_t* decomposed) {
  return guarded([&] {
    const auto c = keep::serving::count_cache_entries(n_users, n_items, n_user_category_pairs);
    if (pairwise != nullptr) *pairwise = c.pairwise;
    if (decomposed != nullptr) *decomposed = c.decomposed;
  });
}

keep_status keep_gauc(const uint64_t* users, const double* scores, const uint8_t* labels, size_t n,
                      double* gauc, size_t* eligible_users) {
  return guarded([&] {
    if (n > 0) {
      need(users, "users");
      need(scores, "scores");
      need(labels, "labels");
    }
    std::vector<keep::harness::ScoredImpression> rows(n);
    for (size_t k = 0; k < n; ++k) rows[k] = {users[k], scores[k], labels[k]};
    const auto rep = keep::harness::gauc(rows);
    if (gauc != nullptr) *gauc = rep.empty ? std::nan("") : rep.gauc;
    if (eligible_users != nullptr) *eligible_users = rep.users;
  });
}

}  // extern "C"

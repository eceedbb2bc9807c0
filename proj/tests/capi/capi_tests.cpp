// Uses nothing but keep.h.
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "keep/keep.h"

namespace {

int failures = 0;

#define EXPECT(cond)                                                     \
  do {                                                                   \
    if (!(cond)) {                                                       \
      std::fprintf(stderr, "%s:%d: expected %s\n", __FILE__, __LINE__, #cond); \
      ++failures;                                                        \
    }                                                                    \
  } while (0)

#define EXPECT_OK(call)                                                          \
  do {                                                                           \
    const keep_status s_ = (call);                                               \
    if (s_ != KEEP_OK) {                                                         \
      std::fprintf(stderr, "%s:%d: %s -> %s: %s\n", __FILE__, __LINE__, #call,    \
                   keep_status_name(s_), keep_last_error());                     \
      ++failures;                                                                \
    }                                                                            \
  } while (0)

bool contains(const char* s, const char* needle) { return std::strstr(s, needle) != nullptr; }

void utilities() {
  uint64_t pairwise = 0, decomposed = 0;
  EXPECT_OK(keep_count_cache_entries(1000, 500, 3000, &pairwise, &decomposed));
  EXPECT(pairwise == 500000 && decomposed == 4500);
  EXPECT(keep_count_cache_entries(UINT64_MAX, 4, 0, &pairwise, &decomposed) ==
         KEEP_ERR_INVALID_ARGUMENT);

  const uint64_t users[] = {1, 1, 2, 2, 2, 2, 2, 2};
  const double scores[] = {0.9, 0.1, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5};
  const uint8_t labels[] = {1, 0, 1, 0, 1, 0, 1, 0};
  double g = 0;
  size_t eligible = 0;
  EXPECT_OK(keep_gauc(users, scores, labels, 8, &g, &eligible));
  EXPECT(g == 0.625 && eligible == 2);
  EXPECT_OK(keep_gauc(users, scores, labels, 1, &g, &eligible));
  EXPECT(std::isnan(g) && eligible == 0);
  EXPECT(keep_gauc(nullptr, scores, labels, 3, &g, nullptr) == KEEP_ERR_INVALID_ARGUMENT);
  EXPECT(contains(keep_last_error(), "NULL"));
}

void config_errors() {
  keep_config* cfg = nullptr;
  EXPECT(keep_config_parse("no equals sign", &cfg) == KEEP_ERR_CONFIG);
  EXPECT(cfg == nullptr);
  EXPECT_OK(keep_config_parse("super_log = /nonexistent/a\nsub_log = /nonexistent/b\n", &cfg));
  EXPECT_OK(keep_config_set(cfg, "gen.n_users", "10"));
  EXPECT_OK(keep_config_set(cfg, "gen.bogus", "1"));
  EXPECT(keep_generate(cfg, nullptr) == KEEP_ERR_CONFIG);
  EXPECT(contains(keep_last_error(), "gen.bogus"));
  keep_config_free(cfg);
  EXPECT(keep_config_load("/nonexistent/keep.conf", &cfg) == KEEP_ERR_IO);
  EXPECT(std::strcmp(keep_status_name(KEEP_ERR_VERSION), "version error") == 0);
}

std::vector<std::string> log_lines;
void collect(const char* line, void*) { log_lines.emplace_back(line); }

void pipeline(const std::filesystem::path& dir) {
  keep_set_log_callback(collect, nullptr);
  const auto p = [&](const char* name) { return (dir / name).string(); };
  keep_config* cfg = nullptr;
  char* summary = nullptr;

  EXPECT_OK(keep_config_new(&cfg));
  keep_config_set(cfg, "super_log", p("super.jsonl").c_str());
  keep_config_set(cfg, "sub_log", p("sub.jsonl").c_str());
  keep_config_set(cfg, "gen.n_users", "200");
  keep_config_set(cfg, "gen.n_items", "300");
  keep_config_set(cfg, "gen.n_categories", "8");
  keep_config_set(cfg, "gen.n_shops", "30");
  EXPECT_OK(keep_generate(cfg, &summary));
  EXPECT(summary && contains(summary, "\"super_records\""));
  keep_string_free(summary);
  keep_config_free(cfg);
  EXPECT(!log_lines.empty());

  keep_config_parse(("super_log = " + p("super.jsonl") + "\nout = " + p("tt.ckpt") +
                     "\nmodel = two_tower\n").c_str(), &cfg);
  EXPECT_OK(keep_pretrain(cfg, nullptr));
  keep_config_free(cfg);

  keep_config_parse(("super_log = " + p("super.jsonl") + "\nout = " + p("deg.ckpt") +
                     "\nmodel = degenerated\n").c_str(), &cfg);
  EXPECT_OK(keep_pretrain(cfg, nullptr));
  keep_config_free(cfg);

  // Resuming from a checkpoint that ends on the wrong day is a state error.
  keep_config_parse(("super_log = " + p("super.jsonl") + "\nout = " + p("x.ckpt") +
                     "\nmodel = degenerated\ndays = 6-6\nresume = " + p("deg.ckpt") + "\n").c_str(),
                    &cfg);
  EXPECT(keep_pretrain(cfg, nullptr) == KEEP_ERR_STATE);
  keep_config_free(cfg);

  std::filesystem::create_directories(dir / "snaps");
  for (int v = 1; v <= 2; ++v) {
    keep_config_parse(("super_log = " + p("super.jsonl") + "\nsub_log = " + p("sub.jsonl") +
                       "\ntwo_tower = " + p("tt.ckpt") + "\ndegenerated = " + p("deg.ckpt") +
                       "\nday = 6\nversion = " + std::to_string(v) + "\nout = " +
                       (dir / "snaps" / ("v" + std::to_string(v) + ".ksnp")).string() + "\n").c_str(),
                      &cfg);
    EXPECT_OK(keep_build_snapshot(cfg, nullptr));
    keep_config_free(cfg);
  }
  std::filesystem::rename(dir / "snaps" / "v2.ksnp", dir / "later.ksnp");

  keep_server* server = nullptr;
  EXPECT_OK(keep_server_start((dir / "snaps").string().c_str(), "127.0.0.1", 0, 5, &server));
  if (server == nullptr) return;
  const auto port = keep_server_port(server);
  EXPECT(port != 0);
  const std::string endpoint = "gkc:127.0.0.1:" + std::to_string(port);

  keep_client* client = nullptr;
  EXPECT_OK(keep_client_connect(endpoint.c_str(), &client));
  uint32_t accepted = 0;
  EXPECT_OK(keep_client_publish(client, 2, (dir / "later.ksnp").string().c_str(), &accepted));
  EXPECT(accepted == 2);
  EXPECT(keep_client_publish(client, 1, (dir / "snaps" / "v1.ksnp").string().c_str(), nullptr) ==
         KEEP_ERR_VERSION);
  uint32_t versions[8] = {};
  EXPECT(keep_server_versions(server, versions, 8) == 2 && versions[0] == 1 && versions[1] == 2);

  const keep_quadruple q[2] = {{0, 0, 0, 2}, {0, 0, 0, 9}};
  uint32_t dim = 0;
  uint8_t status[2] = {}, found[2] = {};
  EXPECT_OK(keep_client_lookup(client, q, 2, &dim, status, found, nullptr, 0));
  EXPECT(dim == 3 * 16 + 24);
  EXPECT(status[0] == 0 && status[1] == 1);
  std::vector<float> values(2 * dim);
  EXPECT(keep_client_lookup(client, q, 2, &dim, status, found, values.data(), 3) == KEEP_ERR_SHAPE);
  EXPECT_OK(keep_client_lookup(client, q, 2, &dim, status, found, values.data(), values.size()));
  keep_client_close(client);

  // Train a plugged model against the running service.
  keep_config_parse(("sub_log = " + p("sub.jsonl") + "\nsuper_log = " + p("super.jsonl") +
                     "\nmode = keep\nknowledge = " + endpoint + "\nversion = 2\nout = " +
                     p("keep.ckpt") + "\n").c_str(), &cfg);
  EXPECT_OK(keep_train(cfg, &summary));
  EXPECT(summary && contains(summary, "\"gauc\""));
  keep_string_free(summary);
  keep_config_free(cfg);

  keep_server_stop(server);
  keep_client* dead = nullptr;
  EXPECT(keep_client_connect(endpoint.c_str(), &dead) == KEEP_ERR_IO);
  keep_set_log_callback(nullptr, nullptr);
}

}  // namespace

int main() {
  const auto dir = std::filesystem::temp_directory_path() / "keep_capi_tests";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  utilities();
  config_errors();
  pipeline(dir);
  std::filesystem::remove_all(dir);
  if (failures) {
    std::fprintf(stderr, "%d failure(s)\n", failures);
    return 1;
  }
  std::printf("capi tests passed\n");
  return 0;
}

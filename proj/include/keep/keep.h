/* C interface to the KEEP library. Every call returns a keep_status; on
 * failure keep_last_error() describes the problem (thread-local, valid until
 * the next failing call on the same thread). Strings returned through
 * `char**` out-params are owned by the caller and released with
 * keep_string_free. */
#ifndef KEEP_KEEP_H
#define KEEP_KEEP_H

#include <stddef.h>
#include <stdint.h>

#if defined(KEEP_BUILDING_LIBRARY)
#define KEEP_API __attribute__((visibility("default")))
#else
#define KEEP_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum keep_status {
  KEEP_OK = 0,
  KEEP_ERR_SHAPE = 1,
  KEEP_ERR_STATE = 2,
  KEEP_ERR_NUMERIC = 3,
  KEEP_ERR_CONFIG = 4,
  KEEP_ERR_IO = 5,
  KEEP_ERR_PROTOCOL = 6,
  KEEP_ERR_MANIFEST = 7,
  KEEP_ERR_VERSION = 8,
  KEEP_ERR_INVALID_ARGUMENT = 9,
  KEEP_ERR_INTERNAL = 100
} keep_status;

KEEP_API const char* keep_last_error(void);
KEEP_API const char* keep_status_name(keep_status s);
KEEP_API void keep_string_free(char* s);

/* Progress lines from long-running calls. Pass NULL to silence. */
typedef void (*keep_log_fn)(const char* line, void* user);
KEEP_API void keep_set_log_callback(keep_log_fn fn, void* user);

/* ---- flat key-value configuration ---- */
typedef struct keep_config keep_config;

KEEP_API keep_status keep_config_new(keep_config** out);
KEEP_API keep_status keep_config_load(const char* path, keep_config** out);
KEEP_API keep_status keep_config_parse(const char* text, keep_config** out);
KEEP_API keep_status keep_config_set(keep_config* cfg, const char* key, const char* value);
KEEP_API void keep_config_free(keep_config* cfg);

/* ---- pipeline operations ----
 * Each reads its parameters from `cfg` (see README for keys) and, when
 * `summary_json` is non-NULL, returns a one-line JSON summary. Unknown keys
 * are rejected with KEEP_ERR_CONFIG. */
KEEP_API keep_status keep_generate(const keep_config* cfg, char** summary_json);
KEEP_API keep_status keep_pretrain(const keep_config* cfg, char** summary_json);
KEEP_API keep_status keep_train(const keep_config* cfg, char** summary_json);
KEEP_API keep_status keep_build_snapshot(const keep_config* cfg, char** summary_json);

/* Runs the experiment grid. `report_text` receives the aligned tables,
 * `passed` is set to 1 when every acceptance check passed. */
KEEP_API keep_status keep_experiment(const keep_config* cfg, char** report_text,
                                     char** report_json, int* passed);

/* ---- knowledge service ---- */
typedef struct keep_server keep_server;

/* Loads every snapshot in snapshot_dir, then listens on host:port (port 0
 * picks a free port). */
KEEP_API keep_status keep_server_start(const char* snapshot_dir, const char* host, uint16_t port,
                                       size_t max_versions, keep_server** out);
KEEP_API uint16_t keep_server_port(const keep_server* s);
/* Retained versions, newest last; returns how many were written (at most cap). */
KEEP_API size_t keep_server_versions(const keep_server* s, uint32_t* out, size_t cap);
KEEP_API void keep_server_stop(keep_server* s);

typedef struct keep_client keep_client;

typedef struct keep_quadruple {
  uint64_t user;
  uint64_t item;
  uint32_t category;
  uint32_t version;
} keep_quadruple;

/* "host:port" or "gkc:host:port". */
KEEP_API keep_status keep_client_connect(const char* endpoint, keep_client** out);
KEEP_API void keep_client_close(keep_client* c);
KEEP_API keep_status keep_client_publish(keep_client* c, uint32_t version, const char* path,
                                         uint32_t* accepted);
/* values must hold n * values_per_entry floats, where values_per_entry is the
 * response's dim_total; call with values = NULL to learn dim_total first
 * (the lookup is then performed and its values discarded). status and
 * found_mask hold n bytes each. */
KEEP_API keep_status keep_client_lookup(keep_client* c, const keep_quadruple* batch, size_t n,
                                        uint32_t* dim_total, uint8_t* status, uint8_t* found_mask,
                                        float* values, size_t values_cap);

/* ---- small utilities ---- */
KEEP_API keep_status keep_count_cache_entries(uint64_t n_users, uint64_t n_items,
                                              uint64_t n_user_category_pairs, uint64_t* pairwise,
                                              uint64_t* decomposed);
/* Impression-weighted per-user AUC; *gauc is NaN when no user has both labels. */
KEEP_API keep_status keep_gauc(const uint64_t* users, const double* scores, const uint8_t* labels,
                               size_t n, double* gauc, size_t* eligible_users);

#ifdef __cplusplus
}
#endif

#endif /* KEEP_KEEP_H */

/*
 * eventmapper — drift-resilient weak-signal event recognition pipeline.
 *
 * C API for the shared library. All functions are thread-compatible: a
 * handle may only be used from one thread at a time, but distinct handles
 * are independent. Errors are reported through negative return codes; the
 * last error message for the calling thread is available via
 * em_last_error().
 */
#ifndef EVENTMAPPER_H
#define EVENTMAPPER_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define EM_API __declspec(dllexport)
#else
#define EM_API __attribute__((visibility("default")))
#endif

/* status codes */
#define EM_OK 0
#define EM_E_INVALID (-1)  /* bad arguments or config */
#define EM_E_IO (-2)       /* filesystem or storage failure */
#define EM_E_STATE (-3)    /* operation not valid in this state */
#define EM_E_RUNTIME (-4)  /* internal failure */

EM_API const char* em_version(void);

/* thread-local message for the most recent failure in this thread */
EM_API const char* em_last_error(void);

EM_API void em_string_free(char* s);

/* ------------------------------------------------------------------ */
/* message bus: embedded log-based pub/sub with durable consumer cursors */

typedef struct em_bus em_bus;
typedef struct em_sub em_sub;
typedef struct em_msg em_msg;

/* Opens (creating if needed) the bus under <data_dir>/bus. */
EM_API em_bus* em_bus_open(const char* data_dir);
EM_API void em_bus_close(em_bus* bus);

/*
 * Publishes a payload. `id` may be NULL for an auto-generated unique id;
 * supplying a stable id makes crash-replay duplicates detectable by
 * consumers. On success returns the assigned offset (>= 0).
 */
EM_API int64_t em_bus_publish(em_bus* bus, const char* topic, const void* payload, size_t len,
                              const char* id);

/* Next offset to be assigned; 0 for unknown topics, negative on error. */
EM_API int64_t em_bus_topic_end(em_bus* bus, const char* topic);

/* Durable subscription; a fresh consumer key starts at offset 0. */
EM_API em_sub* em_bus_subscribe(em_bus* bus, const char* consumer_key, const char* topic);
EM_API void em_sub_close(em_sub* sub);

/* Next unseen message, or NULL when caught up (check em_last_error() ==
 * empty to distinguish errors). Does not advance the cursor. */
EM_API em_msg* em_sub_poll(em_sub* sub);

/* Advances the cursor past `offset` durably. Idempotent below the cursor. */
EM_API int em_sub_ack(em_sub* sub, int64_t offset);

EM_API const char* em_msg_id(const em_msg* msg);
EM_API const char* em_msg_topic(const em_msg* msg);
EM_API int32_t em_msg_partition(const em_msg* msg);
EM_API int64_t em_msg_offset(const em_msg* msg);
EM_API int64_t em_msg_published_at_ms(const em_msg* msg);
EM_API const void* em_msg_payload(const em_msg* msg, size_t* len);
EM_API void em_msg_free(em_msg* msg);

/* ------------------------------------------------------------------ */
/* pipeline */

typedef struct em_pipeline em_pipeline;

/* Parses and validates a pipeline config document (JSON file). */
EM_API em_pipeline* em_pipeline_open(const char* config_path);

/*
 * Runs the supervised pipeline until it drains its sources and goes idle
 * (or hits the configured max runtime). Returns the number of processes
 * that ended in the failed state, or a negative status code.
 */
EM_API int em_pipeline_run(em_pipeline* p);

/* Requests a graceful stop of a running pipeline (callable from another
 * thread). */
EM_API int em_pipeline_stop(em_pipeline* p);

EM_API void em_pipeline_close(em_pipeline* p);

/* ------------------------------------------------------------------ */
/* batch operations */

/* Generates a synthetic drifting stream: corpus, ground-truth labels, and a
 * planted corroborative fixture next to `out_path`. */
EM_API int em_generate(const char* model_path, uint64_t seed, const char* out_path);

/* Stats report for a run directory as a JSON string (caller frees with
 * em_string_free), or NULL on error. */
EM_API char* em_stats_json(const char* run_dir);

/* Writes the run's detected events as a GeoJSON FeatureCollection. */
EM_API int em_export_geojson(const char* run_dir, const char* out_path);

/*
 * Health probe: returns the number of alert records for the run (0 = all
 * clear), or a negative status code. When `summary_json_out` is non-NULL
 * it receives a JSON summary (caller frees with em_string_free).
 */
EM_API int em_health(const char* run_dir, char** summary_json_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* EVENTMAPPER_H */

#ifndef PORTOBELLO_H
#define PORTOBELLO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Axis convention of a renderer.
typedef enum PbConvention {
  // The map frame.
  PB_CONVENTION_RIGHT_Z_UP = 0,
  PB_CONVENTION_LEFT_Z_UP = 1,
  PB_CONVENTION_RIGHT_Y_UP = 2,
  PB_CONVENTION_LEFT_Y_UP = 3,
} PbConvention;

// Result of every fallible call.
typedef enum PbStatus {
  PB_STATUS_OK = 0,
  PB_STATUS_NULL_POINTER = 1,
  PB_STATUS_INVALID_ARGUMENT = 2,
  PB_STATUS_IO = 3,
  // Malformed map, scan or wire bytes.
  PB_STATUS_FORMAT = 4,
  // Scenario document rejected: schema, dangling reference or duplicate id.
  PB_STATUS_SCHEMA = 5,
  // Scenario parsed but has placement errors against the map.
  PB_STATUS_VALIDATION = 6,
  PB_STATUS_INITIALIZATION_FAILED = 7,
  // A Rust panic was caught at the boundary.
  PB_STATUS_INTERNAL = 99,
} PbStatus;

// Scan-to-map localizer bound to one map.
typedef struct PbLocalizer PbLocalizer;

// A point-cloud map with its spatial index.
typedef struct PbMap PbMap;

// Trigger and agent state of one scenario execution.
typedef struct PbRun PbRun;

// A parsed, reference-checked scenario.
typedef struct PbScenario PbScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, static storage.
const char *pb_version(void);

// Message of the last failure on this thread, or NULL. Valid until the next
// failing call on the same thread.
const char *pb_last_error(void);

void pb_string_free(char *s);

void pb_bytes_free(uint8_t *bytes, size_t len);

enum PbStatus pb_map_load(const char *path, struct PbMap **out);

// Builds a map from `count` xyz triples.
enum PbStatus pb_map_from_points(const double *xyz, size_t count, struct PbMap **out);

enum PbStatus pb_map_save(const struct PbMap *map, const char *path);

// Number of points; 0 for NULL.
size_t pb_map_len(const struct PbMap *map);

// Writes the 64-character hex SHA-256 plus NUL; `buf_len` must be ≥ 65.
enum PbStatus pb_map_hash(const struct PbMap *map, char *buf, size_t buf_len);

// Closest map point to `xyz[3]`.
enum PbStatus pb_map_nearest(const struct PbMap *map,
                             const double *xyz,
                             size_t *out_index,
                             double *out_distance);

void pb_map_free(struct PbMap *map);

enum PbStatus pb_scenario_parse(const char *json, struct PbScenario **out);

// Canonical pretty JSON of the scenario.
enum PbStatus pb_scenario_to_json(const struct PbScenario *s, char **out);

// Checks placement against the map. Writes the report as JSON when `out` is
// non-NULL and returns `Validation` if it contains errors.
enum PbStatus pb_scenario_validate(const struct PbScenario *s, const struct PbMap *map, char **out);

// Hex SHA-256 identifying the scenario in run logs.
enum PbStatus pb_scenario_hash(const struct PbScenario *s, char **out);

void pb_scenario_free(struct PbScenario *s);

enum PbStatus pb_run_new(const struct PbScenario *s, struct PbRun **out);

// Evaluates triggers at the vehicle pose. Writes the number of firings to
// `out_fired` and, when `out_events` is non-NULL, the events as a JSON array.
enum PbStatus pb_run_trigger_step(struct PbRun *run,
                                  const double *vehicle_pose,
                                  uint64_t stamp_ns,
                                  size_t *out_fired,
                                  char **out_events);

enum PbStatus pb_run_agent_step(struct PbRun *run, double dt);

// Number of agents; 0 for NULL.
size_t pb_run_agent_count(const struct PbRun *run);

// Pose and flags of agent `index` (scenario order). `visible` applies the
// render cap relative to the last vehicle pose given to trigger_step.
enum PbStatus pb_run_agent(const struct PbRun *run,
                           size_t index,
                           double *out_pose,
                           bool *out_active,
                           bool *out_visible);

// Full run snapshot as JSON.
enum PbStatus pb_run_snapshot_json(const struct PbRun *run, char **out);

void pb_run_free(struct PbRun *run);

// Starts a localizer at `initial_pose`, refined against the first scan.
enum PbStatus pb_localizer_new(const struct PbMap *map,
                               const double *initial_pose,
                               const double *scan_xyz,
                               size_t scan_count,
                               uint64_t stamp_ns,
                               struct PbLocalizer **out);

// Registers a scan (vehicle frame). Non-convergence is not an error: the
// pose holds the prediction and `out_converged` is false.
enum PbStatus pb_localizer_update(struct PbLocalizer *loc,
                                  const double *scan_xyz,
                                  size_t scan_count,
                                  uint64_t stamp_ns,
                                  double *out_pose,
                                  double *out_fitness,
                                  bool *out_converged);

// Constant-velocity pose at `stamp_ns`.
enum PbStatus pb_localizer_predict(const struct PbLocalizer *loc,
                                   uint64_t stamp_ns,
                                   double *out_pose);

void pb_localizer_free(struct PbLocalizer *loc);

// Encodes a message given in its JSON form into one frame.
enum PbStatus pb_wire_encode_json(const char *json, uint8_t **out_bytes, size_t *out_len);

// Decodes exactly one frame into its JSON form.
enum PbStatus pb_wire_decode_json(const uint8_t *bytes, size_t len, char **out_json);

// Total frame size announced by a 9-byte header, for stream reassembly.
enum PbStatus pb_wire_frame_len(const uint8_t *header, size_t header_len, size_t *out_total);

// Re-expresses a pose in another renderer convention. `pose_out` may alias
// `pose_in`.
enum PbStatus pb_convert_pose(const double *pose_in,
                              enum PbConvention from,
                              enum PbConvention to,
                              double *pose_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PORTOBELLO_H */

/* svloc - semantic visual localization core, C API.
 *
 * Opaque handles + status codes over the C++ engine. All functions returning
 * svloc_status leave outputs untouched on failure; svloc_last_error() holds
 * a thread-local description of the most recent failure.
 *
 * JSON configuration strings follow the formats documented in README.md
 * (world specs, pipeline configs, scenario specs). Passing NULL where a
 * config is expected selects the desk-scale defaults.
 */

#ifndef SVLOC_H
#define SVLOC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum svloc_status {
  SVLOC_OK = 0,
  SVLOC_ERR_INVALID_ARGUMENT = 1,
  SVLOC_ERR_EMPTY_INPUT = 2,
  SVLOC_ERR_INFEASIBLE = 3,
  SVLOC_ERR_IO = 4,
  SVLOC_ERR_FORMAT = 5,
  SVLOC_ERR_NUMERIC = 6,
  SVLOC_ERR_CONFIG_MISMATCH = 7,
  SVLOC_ERR_DEGENERATE = 8,
  SVLOC_ERR_INTERNAL = 9
} svloc_status;

const char* svloc_status_name(svloc_status status);
const char* svloc_last_error(void);

typedef struct svloc_world svloc_world;
typedef struct svloc_map svloc_map;
typedef struct svloc_model svloc_model;
typedef struct svloc_database svloc_database;
typedef struct svloc_results svloc_results;

/* ---- worlds ----------------------------------------------------------- */

svloc_status svloc_world_generate(const char* spec_json, uint64_t seed,
                                  svloc_world** out);
svloc_status svloc_world_load(const char* path, svloc_world** out);
svloc_status svloc_world_save(const svloc_world* world, const char* path);
size_t svloc_world_object_count(const svloc_world* world);
void svloc_world_free(svloc_world* world);

/* ---- trajectories + rendering ----------------------------------------- */

/* scenario: "Loop0" | "Loop90" | "Loop180" | "CrossTime".
 * params_json: trajectory parameter object (NULL for defaults). */
svloc_status svloc_trajectory_generate(const svloc_world* world,
                                       const char* scenario,
                                       const char* params_json, uint64_t seed,
                                       const char* out_path);

/* Renders every trajectory pose with the camera from config_json
 * (pipeline config text, NULL = defaults). Database frames are written as
 * <out_dir>/database/frame_NNNNNN.svlf, query windows as
 * <out_dir>/query_NNN/frame_NNNNNN.svlf. */
svloc_status svloc_render_trajectory(const svloc_world* world,
                                     const char* trajectory_path,
                                     const char* config_json,
                                     const char* out_dir);

/* Label corruption: exactly floor(flip_rate * finite pixels) seeded flips. */
svloc_status svloc_frame_perturb(const char* frame_in, const char* frame_out,
                                 double flip_rate, int num_labels,
                                 uint64_t seed, const char* config_json);

/* ---- voxel maps -------------------------------------------------------- */

/* Fuse every .svlf file under frames_dir (sorted by name). */
svloc_status svloc_fuse_dir(const char* frames_dir, const char* config_json,
                            svloc_map** out);
svloc_status svloc_map_save(const svloc_map* map, const char* path);
svloc_status svloc_map_load(const char* path, const char* config_json,
                            svloc_map** out);
size_t svloc_map_occupied_count(const svloc_map* map);
size_t svloc_map_stored_cells(const svloc_map* map);
/* Resolved state of the voxel containing (x,y,z): 0 unobserved, 1 free,
 * 1+label occupied. */
int svloc_map_state_at(const svloc_map* map, double x, double y, double z);
void svloc_map_free(svloc_map* map);

/* ---- training data ----------------------------------------------------- */

svloc_status svloc_make_pairs(const char* frames_dir, const char* config_json,
                              size_t samples, uint64_t seed,
                              const char* out_incomplete,
                              const char* out_complete);

/* ---- descriptor model --------------------------------------------------- */

svloc_status svloc_train_net(const char* pairs_incomplete,
                             const char* pairs_complete,
                             const char* config_json, uint64_t seed,
                             const char* log_csv_path, svloc_model** out);
svloc_status svloc_model_save(const svloc_model* model, const char* path);
svloc_status svloc_model_load(const char* path, svloc_model** out);
int svloc_model_side(const svloc_model* model);
int svloc_model_latent_dim(const svloc_model* model);
/* cells: side^3 states (x-fastest), mu_out: latent_dim floats. */
svloc_status svloc_model_encode(const svloc_model* model, const uint8_t* cells,
                                int side, float* mu_out);
void svloc_model_free(svloc_model* model);

/* Finite-difference gradient verification on a small double-precision net.
 * checked receives the number of sampled parameters. */
svloc_status svloc_grad_check(uint64_t seed, double h, size_t max_params,
                              double* max_rel_error, size_t* checked);

/* ---- vocabulary + database ---------------------------------------------- */

/* Bag of semantic words of a map (SVLW file). */
svloc_status svloc_words_from_map(const svloc_map* map,
                                  const svloc_model* model,
                                  const char* config_json,
                                  const char* out_words_path);

/* Hierarchical k-means vocabulary + Hamming embedding from a word file. */
svloc_status svloc_build_vocab(const char* words_path, const char* config_json,
                               uint64_t seed, const char* out_tree_path,
                               const char* out_embedding_path);

/* Fuses frames_dir and writes map/words/vocab/index/manifest into out_dir. */
svloc_status svloc_build_database(const char* frames_dir,
                                  const svloc_model* model,
                                  const char* tree_path,
                                  const char* embedding_path,
                                  const char* config_json,
                                  const char* out_dir);
svloc_status svloc_database_open(const char* dir, svloc_database** out);
size_t svloc_database_word_count(const svloc_database* db);
void svloc_database_free(svloc_database* db);

/* ---- localization -------------------------------------------------------- */

typedef struct svloc_pose_result {
  double ratio;
  double yaw_rad;
  double translation[3];
  double rms;
  int32_t n_corr;
  double position_error;  /* -1 when no ground truth */
  double yaw_error_deg;
} svloc_pose_result;

/* Localize the window of frames under query_dir (all .svlf, sorted) against
 * the database. Frame poses are consumed as odometry; when they are world
 * truth, per-rank errors are reported. */
svloc_status svloc_localize(const svloc_database* db, const svloc_model* model,
                            const char* query_dir, const char* config_json,
                            uint64_t query_id, svloc_results** out);
size_t svloc_results_count(const svloc_results* results);
svloc_status svloc_results_get(const svloc_results* results, size_t rank,
                               svloc_pose_result* out);
svloc_status svloc_results_write_csv(const svloc_results* results,
                                     const char* path);
void svloc_results_free(svloc_results* results);

/* ---- evaluation + scenarios ---------------------------------------------- */

/* thresholds: comma-separated meters, e.g. "1,5". Reads a results CSV
 * written by svloc_results_write_csv / run-scenario and emits the
 * rank-recall table. */
svloc_status svloc_evaluate_csv(const char* results_csv, const char* thresholds,
                                int max_rank, const char* out_csv);

/* Full experimental protocol; writes reports under out_dir. */
svloc_status svloc_run_scenario(const char* spec_json, uint64_t seed,
                                const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* SVLOC_H */

#ifndef SCENEFIT_H
#define SCENEFIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Number of loss terms written by [`scenefit_scene_losses`].
 */
#define SCENEFIT_TERM_COUNT 10

/**
 * Result code of every fallible call.
 */
typedef enum ScenefitStatus {
  SCENEFIT_STATUS_OK = 0,
  SCENEFIT_STATUS_NULL_ARGUMENT = 1,
  SCENEFIT_STATUS_INVALID_UTF8 = 2,
  SCENEFIT_STATUS_IO = 3,
  SCENEFIT_STATUS_PARSE = 4,
  SCENEFIT_STATUS_SCHEMA = 5,
  SCENEFIT_STATUS_INVALID_INPUT = 6,
  /**
   * Degenerate, empty or non-watertight mesh.
   */
  SCENEFIT_STATUS_MESH = 7,
  /**
   * Non-finite loss, failed line search or a point behind the camera.
   */
  SCENEFIT_STATUS_OPTIMIZATION = 8,
  /**
   * Empty matching, length mismatch or degenerate alignment.
   */
  SCENEFIT_STATUS_EVALUATION = 9,
  SCENEFIT_STATUS_PLACEMENT_FAILED = 10,
  SCENEFIT_STATUS_PANIC = 11,
} ScenefitStatus;

/**
 * Loaded scene, its current optimization state and run configuration.
 */
typedef struct ScenefitScene ScenefitScene;

/**
 * Evaluation of a predicted scene against ground truth. Measures that do not apply (no
 * matched boxes, no human) are NaN.
 */
typedef struct ScenefitEvalReport {
  double mean_iou3d;
  double mean_iou2d;
  /**
   * Meters.
   */
  double pje3d_m;
  /**
   * Pixels.
   */
  double pje2d_px;
  double v2v_mm;
  double pje_mm;
  double p_v2v_mm;
  double p_pje_mm;
  /**
   * Number of matched box pairs.
   */
  size_t matched;
} ScenefitEvalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a scene document. `config_path` may be null for the default run configuration.
 *
 * # Safety
 * String arguments are null or NUL-terminated; `out` is a valid pointer.
 */
enum ScenefitStatus scenefit_scene_load(const char *scene_path,
                                        const char *config_path,
                                        struct ScenefitScene **out);

/**
 * Generate a perturbed starting scene and its ground truth. `spec_path` may be null for the
 * default generator settings. Both handles use the default run configuration.
 *
 * # Safety
 * `spec_path` is null or NUL-terminated; `out_init` and `out_gt` are valid pointers.
 */
enum ScenefitStatus scenefit_synth(uint64_t seed,
                                   const char *spec_path,
                                   struct ScenefitScene **out_init,
                                   struct ScenefitScene **out_gt);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `scene` is null or a handle not yet freed.
 */
void scenefit_scene_free(struct ScenefitScene *scene);

/**
 * Write the weighted total loss of the current state.
 *
 * # Safety
 * `scene` is a live handle; `out_total` is a valid pointer.
 */
enum ScenefitStatus scenefit_scene_loss(const struct ScenefitScene *scene, double *out_total);

/**
 * Write the unweighted value of every loss term in this order: keypoints, pose prior,
 * bending, self-penetration, scene reprojection, collision, object-ground, body-ground,
 * contact, body penetration. `len` must be at least [`SCENEFIT_TERM_COUNT`].
 *
 * # Safety
 * `scene` is a live handle; `out` points to `len` writable doubles.
 */
enum ScenefitStatus scenefit_scene_losses(const struct ScenefitScene *scene,
                                          double *out,
                                          size_t len);

/**
 * Refine the scene in place. With `stage1_only` the joint stage is skipped.
 *
 * # Safety
 * `scene` is a live handle not used concurrently.
 */
enum ScenefitStatus scenefit_scene_optimize(struct ScenefitScene *scene, bool stage1_only);

/**
 * Write the current state as a scene document.
 *
 * # Safety
 * `scene` is a live handle; `path` is NUL-terminated.
 */
enum ScenefitStatus scenefit_scene_save(const struct ScenefitScene *scene, const char *path);

/**
 * Number of objects in the scene.
 *
 * # Safety
 * `scene` is a live handle; `out` is a valid pointer.
 */
enum ScenefitStatus scenefit_scene_object_count(const struct ScenefitScene *scene, size_t *out);

/**
 * Current box of object `index`: centroid and size in meters, yaw in radians.
 *
 * # Safety
 * `scene` is a live handle; `centroid` and `size` point to 3 doubles; `yaw` is valid.
 */
enum ScenefitStatus scenefit_scene_object_box(const struct ScenefitScene *scene,
                                              size_t index,
                                              double *centroid,
                                              double *size,
                                              double *yaw);

/**
 * Compare `pred` against `gt`, matching boxes greedily by 3D IoU.
 *
 * # Safety
 * Both handles are live; `out` is a valid pointer.
 */
enum ScenefitStatus scenefit_evaluate(const struct ScenefitScene *pred,
                                      const struct ScenefitScene *gt,
                                      struct ScenefitEvalReport *out);

/**
 * Copy the calling thread's last error message into `buf` (truncated, always
 * NUL-terminated when `len > 0`). Returns the full message length in bytes, excluding the
 * terminator; 0 when the last call succeeded.
 *
 * # Safety
 * `buf` is null or points to `len` writable bytes.
 */
size_t scenefit_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *scenefit_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCENEFIT_H */

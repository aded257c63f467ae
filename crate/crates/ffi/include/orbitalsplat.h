#ifndef ORBITALSPLAT_H
#define ORBITALSPLAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum OspStatus {
  OSP_STATUS_OK = 0,
  OSP_STATUS_NULL_ARGUMENT = 1,
  OSP_STATUS_INVALID_ARGUMENT = 2,
  OSP_STATUS_IO = 3,
  OSP_STATUS_PARSE = 4,
  OSP_STATUS_RUNTIME = 5,
  OSP_STATUS_PANIC = 6,
} OspStatus;

typedef struct OspCloud OspCloud;

typedef struct OspImage OspImage;

typedef struct OspMesh OspMesh;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *osp_last_error(void);

const char *osp_version(void);

/**
 * Writes the 48 orbit camera positions (`48×3`) and world-from-camera
 * quaternions (`48×4`, w x y z) in file order xy, yz, xz.
 *
 * # Safety
 * `positions` must hold 144 doubles and `quaternions` 192.
 */
enum OspStatus osp_orbit_poses(double radius, double *positions, double *quaternions);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum OspStatus osp_mesh_load(const char *path, struct OspMesh **out);

/**
 * # Safety
 * `mesh` must be null or a live handle.
 */
size_t osp_mesh_vertex_count(const struct OspMesh *mesh);

/**
 * # Safety
 * `mesh` must be null or a live handle.
 */
size_t osp_mesh_triangle_count(const struct OspMesh *mesh);

/**
 * # Safety
 * `mesh` must be null or a handle not yet freed.
 */
void osp_mesh_free(struct OspMesh *mesh);

/**
 * Renders the 48 orbit views of an OBJ model into `out_dir` with the
 * default Lambertian shading.
 *
 * # Safety
 * Both strings must be NUL-terminated.
 */
enum OspStatus osp_render_dataset(const char *model,
                                  const char *out_dir,
                                  uint32_t size,
                                  double fov_y_deg,
                                  double radius);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum OspStatus osp_image_load(const char *path, struct OspImage **out);

/**
 * Builds an image from `width·height·4` bytes of row-major RGBA.
 *
 * # Safety
 * `bytes` must hold `width·height·4` bytes and `out` be valid.
 */
enum OspStatus osp_image_from_rgba8(uint32_t width,
                                    uint32_t height,
                                    const uint8_t *bytes,
                                    struct OspImage **out);

/**
 * Copies the image as 8-bit RGBA into `bytes`.
 *
 * # Safety
 * `bytes` must hold `len` bytes.
 */
enum OspStatus osp_image_to_rgba8(const struct OspImage *image, uint8_t *bytes, size_t len);

/**
 * # Safety
 * `image` must be null or a live handle.
 */
uint32_t osp_image_width(const struct OspImage *image);

/**
 * # Safety
 * `image` must be null or a live handle.
 */
uint32_t osp_image_height(const struct OspImage *image);

/**
 * # Safety
 * `image` must be a live handle and `path` NUL-terminated.
 */
enum OspStatus osp_image_save(const struct OspImage *image, const char *path);

/**
 * # Safety
 * `image` must be null or a handle not yet freed.
 */
void osp_image_free(struct OspImage *image);

/**
 * # Safety
 * Handles must be live and `out` valid.
 */
enum OspStatus osp_psnr(const struct OspImage *a,
                        const struct OspImage *b,
                        double max_value,
                        double *out);

/**
 * # Safety
 * Handles must be live and `out` valid.
 */
enum OspStatus osp_ssim(const struct OspImage *a, const struct OspImage *b, double *out);

/**
 * Loads a cloud in either the binary or the text format.
 *
 * # Safety
 * `path` must be NUL-terminated and `out` valid.
 */
enum OspStatus osp_cloud_load(const char *path, struct OspCloud **out);

/**
 * Writes the text format for a `.txt` path, the binary format otherwise.
 *
 * # Safety
 * `cloud` must be live and `path` NUL-terminated.
 */
enum OspStatus osp_cloud_save(const struct OspCloud *cloud, const char *path);

/**
 * # Safety
 * `cloud` must be null or a live handle.
 */
size_t osp_cloud_len(const struct OspCloud *cloud);

/**
 * # Safety
 * `cloud` must be null or a handle not yet freed.
 */
void osp_cloud_free(struct OspCloud *cloud);

/**
 * Splats the cloud from `eye` looking at the origin; uncovered pixels get
 * `background` (RGB) and the returned alpha is the accumulated opacity.
 *
 * # Safety
 * `eye`, `up` and `background` must each point to 3 doubles; `out` valid.
 */
enum OspStatus osp_cloud_render(const struct OspCloud *cloud,
                                const double *eye,
                                const double *up,
                                double fov_y_deg,
                                uint32_t width,
                                uint32_t height,
                                const double *background,
                                struct OspImage **out);

/**
 * Reconstructs a cloud from `reference_png` using the stored views of a
 * rendered dataset as guidance.
 *
 * `reference_view` (e.g. `"xy_02"`) sets the reference pose from the
 * dataset; `config_toml` is an optional pipeline configuration file.
 * Either may be null.
 *
 * # Safety
 * Non-null strings must be NUL-terminated; `out` valid.
 */
enum OspStatus osp_reconstruct_ground_truth(const char *reference_png,
                                            const char *dataset_dir,
                                            const char *reference_view,
                                            const char *config_toml,
                                            struct OspCloud **out);

/**
 * Extracts the `iso` surface of the cloud's density on a `grid`³ lattice,
 * bakes an `atlas_size`² texture from the 42 distinct orbit views and writes
 * `<stem>.obj`, `<stem>.mtl` and `<stem>.png` into `out_dir`.
 *
 * # Safety
 * `cloud` must be live; strings NUL-terminated.
 */
enum OspStatus osp_extract_mesh(const struct OspCloud *cloud,
                                uint32_t grid,
                                double iso,
                                uint32_t atlas_size,
                                const char *out_dir,
                                const char *stem);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ORBITALSPLAT_H */

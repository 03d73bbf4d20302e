#ifndef TROLLEYBOT_H
#define TROLLEYBOT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TbStatus {
  TB_STATUS_OK = 0,
  TB_STATUS_NULL_POINTER = 1,
  TB_STATUS_INVALID_ARGUMENT = 2,
  TB_STATUS_INFEASIBLE = 3,
  TB_STATUS_FAILED = 4,
  TB_STATUS_PANIC = 5,
} TbStatus;

typedef enum TbQpStatus {
  TB_QP_STATUS_OPTIMAL = 0,
  TB_QP_STATUS_RELAXED_VIEW = 1,
  TB_QP_STATUS_INFEASIBLE = 2,
} TbQpStatus;

// Opaque CLF-CBF tracking controller.
typedef struct TbController TbController;

// Planar pose; heading in radians.
typedef struct TbPose {
  double x;
  double y;
  double theta;
} TbPose;

typedef struct TbInput {
  double v;
  double omega;
} TbInput;

typedef struct TbLimits {
  double v_max;
  double omega_max;
  double a_max;
  double alpha_max;
} TbLimits;

typedef struct TbStepInput {
  // Virtual target in the robot frame.
  struct TbPose x_rel;
  // Zero disables the view constraint.
  int32_t has_target;
  // Point to keep in view, robot frame.
  double target_x;
  double target_y;
  double v_ref;
  double omega_ref;
  struct TbLimits limits;
  double dt;
} TbStepInput;

typedef struct TbStepOutput {
  struct TbInput u;
  double lyapunov;
  // NaN when the view constraint was inactive.
  double barrier;
  double slack;
  enum TbQpStatus status;
  // Nonzero when the solver failed and the previous input was decayed.
  int32_t fallback;
} TbStepOutput;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Valid until the next
// failing call on the same thread.
const char *tb_last_error(void);

// Advances a unicycle by `dt` under a constant input.
//
// # Safety
// Pointers must be null or valid for the access implied by their type.
enum TbStatus tb_step_unicycle(const struct TbPose *pose_in,
                               const struct TbInput *u,
                               double dt,
                               struct TbPose *out);

// `a` followed by `b`, with `b` expressed in the frame of `a`.
//
// # Safety
// Pointers must be null or valid for the access implied by their type.
enum TbStatus tb_compose(const struct TbPose *a, const struct TbPose *b, struct TbPose *out);

// `b` expressed in the frame of `a`.
//
// # Safety
// Pointers must be null or valid for the access implied by their type.
enum TbStatus tb_relative(const struct TbPose *a, const struct TbPose *b, struct TbPose *out);

// Minimizes `0.5 z'Pz + q'z` subject to `A z <= b` and `lower <= z <= upper`.
// `p` is `n*n` row-major, `a` is `m*n` row-major. Infinite bounds are allowed.
// Returns `Infeasible` when no point satisfies the constraints.
//
// # Safety
// Array pointers must hold the stated number of elements; `a` and `b` may be
// null when `m` is zero.
enum TbStatus tb_qp_solve(size_t n,
                          const double *p,
                          const double *q,
                          size_t m,
                          const double *a,
                          const double *b,
                          const double *lower,
                          const double *upper,
                          double *z_out,
                          double *objective_out);

// Creates a controller. `config_json` may be null for the defaults.
//
// # Safety
// `config_json` must be null or a NUL-terminated string; `out` must be valid.
enum TbStatus tb_controller_new(const char *config_json, struct TbController **out);

// Sets the input the next step's rate limits are measured from.
//
// # Safety
// `ctl` must come from [`tb_controller_new`] and not have been freed.
enum TbStatus tb_controller_reset(struct TbController *ctl, struct TbInput prev);

// One tracking step.
//
// # Safety
// `ctl` must come from [`tb_controller_new`]; other pointers must be valid.
enum TbStatus tb_controller_step(struct TbController *ctl,
                                 const struct TbStepInput *input,
                                 struct TbStepOutput *out);

// # Safety
// `ctl` must be null or come from [`tb_controller_new`], and is invalid
// afterwards.
void tb_controller_free(struct TbController *ctl);

// Runs a controller comparison on a scenario and returns the summary JSON.
// `controller` is a name (`clfcbf`, `mpc`, `nonlinear`) or null for all three.
//
// # Safety
// Strings must be NUL-terminated; `summary_out` must be valid.
enum TbStatus tb_run_batch_json(const char *scenario_json,
                                const char *controller,
                                size_t runs,
                                uint64_t seed,
                                char **summary_out);

// Runs the full mission on a scenario and returns the report JSON.
//
// # Safety
// `scenario_json` must be NUL-terminated; `report_out` must be valid.
enum TbStatus tb_run_mission_json(const char *scenario_json, uint64_t seed, char **report_out);

// # Safety
// `s` must be null or a string returned by this library, and is invalid
// afterwards.
void tb_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TROLLEYBOT_H */

#include <math.h>
#include <stdio.h>
#include "trolleybot.h"

int main(void) {
    TbPose start = {0.0, 0.0, 0.0}, next;
    TbInput u = {0.5, 0.0};
    if (tb_step_unicycle(&start, &u, 2.0, &next) != TB_STATUS_OK || fabs(next.x - 1.0) > 1e-12) return 1;

    double p[4] = {1, 0, 0, 1}, q[2] = {-1, -1}, a[2] = {1, 1}, b[1] = {1};
    double lo[2] = {-INFINITY, -INFINITY}, hi[2] = {INFINITY, INFINITY}, z[2], f;
    if (tb_qp_solve(2, p, q, 1, a, b, lo, hi, z, &f) != TB_STATUS_OK || fabs(z[0] - 0.5) > 1e-12) return 2;

    TbController *ctl = NULL;
    if (tb_controller_new(NULL, &ctl) != TB_STATUS_OK) return 3;
    TbStepInput in = {{0.5, 0.0, 0.0}, 1, 1.0, 0.0, 0.0, 0.0, {0.22, 0.4, 0.5, 1.5}, 0.05};
    TbStepOutput out;
    if (tb_controller_step(ctl, &in, &out) != TB_STATUS_OK || out.status != TB_QP_STATUS_OPTIMAL) return 4;
    tb_controller_free(ctl);

    if (tb_step_unicycle(NULL, &u, 1.0, &next) != TB_STATUS_NULL_POINTER || tb_last_error() == NULL) return 5;
    printf("ok %.3f\n", out.u.v);
    return 0;
}

#include <math.h>
#include <stdio.h>
#include "asv_inekf.h"

#define CHECK(x) do { AsvStatus s_ = (x); if (s_ != ASV_STATUS_OK) { \
    fprintf(stderr, "%s: %s\n", #x, asv_status_message(s_)); return 1; } } while (0)

int main(void) {
    AsvParams params;
    CHECK(asv_params_default(&params));
    AsvPose x0 = {{1, 0, 0, 0, 1, 0, 0, 0, 1}, {1, 0, 0}, {0, 0, 0}};
    double sv[3] = {0.3, 0.3, 0.3}, sp[3] = {0.3, 0.3, 0.3};
    double cov[81];
    CHECK(asv_initial_covariance(ASV_FILTER_KIND_INEKF, &x0, 0.035, sv, sp, cov));
    AsvEstimator *est = NULL;
    CHECK(asv_estimator_new(ASV_FILTER_KIND_INEKF, &x0, cov, 0.0, &params, &est));
    double gyro[3] = {0, 0, 0.01}, accel[3] = {0, 0, 9.80665};
    int applied = -1;
    for (int k = 1; k <= 100; k++) {
        CHECK(asv_estimator_predict(est, gyro, accel, 0.01));
        if (k % 10 == 0) {
            AsvRollPitch rp = {k * 0.01, 0.0, 0.0, 0.01, 0.01};
            CHECK(asv_estimator_update_roll_pitch(est, rp, &applied));
        }
    }
    double fix[3] = {1.0, 0.0, 0.0};
    CHECK(asv_estimator_update_gps(est, 1.0, fix, 0.5, 1.0, &applied));
    CHECK(asv_estimator_update_heading(est, 1.0, 0.01, 0.02, NULL));
    AsvPose x;
    double t;
    CHECK(asv_estimator_get_state(est, &x, &t));
    AsvSkipCounts skips;
    CHECK(asv_estimator_skips(est, &skips));
    if (asv_estimator_predict(NULL, gyro, accel, 0.01) != ASV_STATUS_NULL_POINTER) return 2;
    if (asv_estimator_predict(est, gyro, accel, 1.0) != ASV_STATUS_INVALID_INPUT) return 3;
    asv_estimator_free(est);
    printf("%.3f %.3f %d\n", t, x.p[0], applied);
    return fabs(t - 1.0) < 1e-9 && fabs(x.p[0] - 1.0) < 0.2 && applied == 1 ? 0 : 4;
}

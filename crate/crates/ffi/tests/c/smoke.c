#include <math.h>
#include <stdio.h>
#include <string.h>

#include "sonomyo.h"

int main(void) {
    const double t[4] = {0, 0, 0, 0};
    const double p[4] = {5, 5, 0, 0};
    double out = 0;
    if (sono_rmse(t, p, 4, &out) != SONO_STATUS_OK || fabs(out - sqrt(12.5)) > 1e-12) {
        fprintf(stderr, "rmse %f\n", out);
        return 1;
    }
    SonoSvc *svc = NULL;
    if (sono_svc_load("/nonexistent/svc.bin", &svc) != SONO_STATUS_IO || svc != NULL) {
        return 2;
    }
    const char *msg = sono_last_error();
    if (msg == NULL || strlen(msg) == 0) {
        return 3;
    }
    printf("sonomyo %s\n", sono_version());
    return 0;
}

#include <math.h>
#include <stdio.h>

#include "safenav.h"

#define CHECK(cond)                                                   \
    do {                                                              \
        if (!(cond)) {                                                \
            fprintf(stderr, "%s:%d: %s\n", __FILE__, __LINE__, #cond); \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(void) {
    double z[3] = {1.0, -2.0, 3.5};
    double out = 0.0;
    CHECK(safenav_softmin(z, 3, 10.0, &out) == SAFENAV_STATUS_OK);
    CHECK(out <= -2.0 && out >= -2.0 - log(3.0) / 10.0);
    CHECK(safenav_softmin(NULL, 3, 10.0, &out) == SAFENAV_STATUS_NULL_POINTER);
    CHECK(safenav_last_error() != NULL);

    SafenavScenario *s = NULL;
    CHECK(safenav_scenario_open("tracking", &s) == SAFENAV_STATUS_OK);
    SafenavRun *run = NULL;
    CHECK(safenav_run(s, &run) == SAFENAV_STATUS_OK);
    SafenavSummary sum;
    CHECK(safenav_run_summary(run, &sum) == SAFENAV_STATUS_OK);
    CHECK(sum.reached && sum.exit_code == 0);
    CHECK(safenav_run_len(run) == sum.steps);

    SafenavRecord rec;
    CHECK(safenav_run_record(run, 0, &rec) == SAFENAV_STATUS_OK);
    CHECK(rec.t == 0.0);

    safenav_run_free(run);
    safenav_scenario_free(s);
    printf("ok %zu steps\n", sum.steps);
    return 0;
}

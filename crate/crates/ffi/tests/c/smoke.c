#include <math.h>
#include <stdio.h>
#include <string.h>

#include "milo.h"

static const char *CONFIG =
    "{\"name\": \"c-smoke\","
    " \"environment\": {\"kind\": \"chain\", \"n\": 5, \"horizon\": 12, \"slip\": 0.1},"
    " \"behavior\": {\"kind\": \"epsilon\", \"epsilon\": 0.5},"
    " \"n_e\": 10, \"n_o\": 500, \"solver\": {\"iterations\": 5}, \"seeds\": [0]}";

int main(void) {
    MiloExperiment *exp = NULL;
    if (milo_experiment_from_json(CONFIG, &exp) != MILO_STATUS_OK) {
        fprintf(stderr, "from_json: %s\n", milo_last_error());
        return 1;
    }
    MiloRunResult *res = NULL;
    if (milo_experiment_run(exp, "milo", 0, &res) != MILO_STATUS_OK) {
        fprintf(stderr, "run: %s\n", milo_last_error());
        return 1;
    }
    size_t n = 0;
    milo_run_result_num_iterations(res, &n);
    MiloIterationMetrics m;
    if (n != 5 || milo_run_result_iteration(res, n - 1, &m) != MILO_STATUS_OK || m.iter != 5) {
        return 2;
    }
    if (milo_run_result_iteration(res, n, &m) != MILO_STATUS_INVALID_ARGUMENT || milo_last_error() == NULL) {
        return 3;
    }
    if (milo_experiment_run(exp, "dagger", 0, &res) != MILO_STATUS_CONFIG) {
        return 4;
    }
    double w[2], v;
    const double a[2] = {3.0, 4.0}, z[2] = {0.0, 0.0};
    milo_mmd_best_response(a, z, 2, w, &v);
    if (fabs(v - 5.0) > 1e-12 || fabs(w[0] - 0.6) > 1e-12) {
        return 5;
    }
    printf("ok %s %zu\n", milo_version(), n);
    milo_experiment_free(exp);
    return 0;
}

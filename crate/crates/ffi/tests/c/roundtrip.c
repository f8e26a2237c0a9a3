#include <math.h>
#include <stdio.h>
#include "bnn.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        BnnStatus st_ = (call);                                            \
        if (st_ != BNN_STATUS_OK) {                                        \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)st_,             \
                    bnn_last_error_message());                             \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    size_t widths[1] = {8};
    BnnModel *model = NULL;
    CHECK(bnn_model_new(1, widths, 1, 1, BNN_ACTIVATION_RELU, BNN_PRIOR_GAUSSIAN, &model));

    double x[30], y[30];
    for (int i = 0; i < 30; i++) {
        x[i] = i / 15.0;
        y[i] = sin(6.283185307179586 * x[i]);
    }
    BnnDataset *data = NULL;
    CHECK(bnn_dataset_new(x, 30, 1, y, 1, &data));

    BnnDraws *draws = NULL;
    CHECK(bnn_fit_vi(model, data, 200, 0.01, 40, 5, &draws));
    size_t s = 0, p = 0;
    CHECK(bnn_draws_shape(draws, &s, &p));
    if (s != 40 || p != bnn_model_param_count(model)) {
        fprintf(stderr, "shape %zu x %zu\n", s, p);
        return 1;
    }

    double grid[2] = {0.25, 1.5}, mean[2];
    CHECK(bnn_predict(model, draws, grid, 2, 0.95, 1, mean, NULL, NULL));

    size_t bad[1] = {0};
    BnnModel *none = NULL;
    if (bnn_model_new(1, bad, 1, 1, 0, 0, &none) != BNN_STATUS_INVALID_CONFIG) return 1;

    printf("ok %s %.6f %.6f\n", bnn_version(), mean[0], mean[1]);
    bnn_draws_free(draws);
    bnn_dataset_free(data);
    bnn_model_free(model);
    return 0;
}

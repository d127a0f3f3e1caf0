#include <math.h>
#include <stdio.h>

#include "sns.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        SnsStatus s_ = (call);                                             \
        if (s_ != SNS_STATUS_OK) {                                         \
            char msg[256];                                                 \
            sns_last_error_message(msg, sizeof msg);                       \
            fprintf(stderr, "%s failed (%d): %s\n", #call, (int)s_, msg);  \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(void) {
    SnsGrid *grid = NULL;
    SnsPartition *part = NULL;
    SnsField *u = NULL, *heated = NULL;
    int32_t j0, j1;
    double residual, before, after, theta;

    CHECK(sns_grid_new(2, 32, 6.283185307179586, &grid));
    CHECK(sns_partition_new(grid, &part));
    CHECK(sns_partition_info(part, &j0, &j1, &residual));
    CHECK(sns_field_taylor_green(grid, 1.0, 1.0, &u));
    CHECK(sns_besov_norm(u, part, -0.5, 4.0, 3.0, &before));
    CHECK(sns_field_heat(u, 0.5, &heated));
    CHECK(sns_besov_norm(heated, part, -0.5, 4.0, 3.0, &after));
    CHECK(sns_theta1(1.5, 1.0, &theta));

    if (sns_grid_new(2, 20, 1.0, &grid) != SNS_STATUS_INVALID_ARGUMENT) {
        fprintf(stderr, "bad grid accepted\n");
        return 1;
    }
    printf("shells %d..%d residual %.3e besov %.6f -> %.6f theta %.2f\n",
           j0, j1, residual, before, after, theta);

    sns_field_free(heated);
    sns_field_free(u);
    sns_partition_free(part);
    sns_grid_free(grid);
    return (residual <= 1e-10 && fabs(after - before * exp(-1.0)) < 1e-9 && theta == 0.5) ? 0 : 1;
}

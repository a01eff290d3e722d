#include <stdio.h>
#include <string.h>
#include "dr1.h"

#define CHECK(cond) do { if (!(cond)) { fprintf(stderr, "failed: %s (line %d)\n", #cond, __LINE__); return 1; } } while (0)

int main(int argc, char **argv) {
    double v = 0.0;
    CHECK(dr1_r_cold(22.0, 24.0, 2.0) == 1.0);
    CHECK(dr1_r_task(1, 0) == 0.0);
    CHECK(dr1_parse_boxed_answer("<answer>\\boxed{27}</answer>", &v) == DR1_STATUS_OK && v == 27.0);
    CHECK(dr1_tolerance("adni", "CDRSB", &v) == DR1_STATUS_OK && v == 1.0);
    CHECK(dr1_tolerance("amc", "nope", &v) == DR1_STATUS_UNKNOWN_INDEX);

    char msg[128];
    CHECK(dr1_last_error_message(msg, sizeof msg) > 1 && strstr(msg, "nope") != NULL);

    double rewards[3] = {1.0, 1.0, 1.0}, adv[3];
    CHECK(dr1_compute_advantages(rewards, 3, adv) == DR1_STATUS_OK && adv[0] == 0.0);

    uint8_t pred[4] = {1, 1, 0, 0}, lab[4] = {1, 0, 0, 1};
    Dr1Metrics m;
    CHECK(dr1_compute_metrics(pred, lab, 4, &m) == DR1_STATUS_OK && m.tp == 1 && m.f1 == 0.5);

    Dr1Policy *p = NULL;
    CHECK(dr1_policy_load("/nonexistent.ckpt", &p) == DR1_STATUS_IO && p == NULL);
    if (argc > 1) {
        CHECK(dr1_policy_load(argv[1], &p) == DR1_STATUS_OK);
        size_t n = 0;
        CHECK(dr1_policy_num_actions(p, "diagnosis", &n) == DR1_STATUS_OK && n == 2);
        dr1_policy_free(p);
    }
    printf("ok %s\n", dr1_version());
    return 0;
}

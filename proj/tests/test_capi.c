/* Exercises the shared library through its C header only. */
#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "iopfl/iopfl.h"

static int failures = 0;

#define EXPECT(cond)                                                  \
  do {                                                                \
    if (!(cond)) {                                                    \
      fprintf(stderr, "%s:%d: expectation failed: %s\n", __FILE__,   \
              __LINE__, #cond);                                       \
      ++failures;                                                     \
    }                                                                 \
  } while (0)

static void test_status_contract(void) {
  EXPECT(iopfl_exit_code(IOPFL_OK) == 0);
  EXPECT(iopfl_exit_code(IOPFL_ERR_CONFIG) == 1);
  EXPECT(iopfl_exit_code(IOPFL_ERR_IO) == 1);
  EXPECT(iopfl_exit_code(IOPFL_ERR_NUMERIC) == 2);
  EXPECT(strlen(iopfl_version()) > 0);
}

static void test_config(void) {
  iopfl_config* cfg = NULL;
  EXPECT(iopfl_config_default(&cfg) == IOPFL_OK);
  EXPECT(iopfl_config_set_seed(cfg, 42) == IOPFL_OK);
  EXPECT(iopfl_config_set_threads(cfg, 0) == IOPFL_ERR_CONFIG);
  EXPECT(strstr(iopfl_last_error(), "threads") != NULL);
  EXPECT(iopfl_config_set_output_dir(cfg, "somewhere") == IOPFL_OK);

  size_t needed = 0;
  EXPECT(iopfl_config_to_json(cfg, NULL, 0, &needed) == IOPFL_OK);
  EXPECT(needed > 10);
  char* buf = malloc(needed);
  EXPECT(iopfl_config_to_json(cfg, buf, needed, NULL) == IOPFL_OK);
  EXPECT(strstr(buf, "\"master\": 42") != NULL);
  EXPECT(strstr(buf, "somewhere") != NULL);
  char small[8];
  EXPECT(iopfl_config_to_json(cfg, small, sizeof small, NULL) == IOPFL_ERR_CONFIG);
  EXPECT(small[7] == '\0');

  iopfl_config* round_trip = NULL;
  EXPECT(iopfl_config_parse(buf, &round_trip) == IOPFL_OK);
  iopfl_config_free(round_trip);
  free(buf);
  iopfl_config_free(cfg);

  cfg = NULL;
  EXPECT(iopfl_config_parse("{\"federation\": {\"roundz\": 1}}", &cfg) == IOPFL_ERR_CONFIG);
  EXPECT(strstr(iopfl_last_error(), "federation.roundz") != NULL);
  EXPECT(cfg == NULL);
  EXPECT(iopfl_config_parse("{not json", &cfg) == IOPFL_ERR_CONFIG);
  EXPECT(iopfl_config_load("/nonexistent/config.json", &cfg) == IOPFL_ERR_CONFIG);
  EXPECT(iopfl_train(NULL, "x") == IOPFL_ERR_CONFIG);
  iopfl_config_free(NULL);
}

static void test_model(void) {
  iopfl_model* m = NULL;
  EXPECT(iopfl_model_build(1, 2, 4, 9, &m) == IOPFL_OK);
  size_t params = 0, classes = 0;
  EXPECT(iopfl_model_param_count(m, &params) == IOPFL_OK);
  EXPECT(params > 0);
  EXPECT(iopfl_model_classes(m, &classes) == IOPFL_OK && classes == 2);

  double x[2 * 8 * 8];
  for (int i = 0; i < 2 * 64; ++i) x[i] = sin(0.3 * i);
  double y[2 * 2 * 64], z[2 * 2 * 64];
  EXPECT(iopfl_model_forward(m, x, 2, 1, 8, 8, y, 2 * 2 * 64) == IOPFL_OK);
  EXPECT(iopfl_model_forward(m, x, 2, 1, 8, 8, y, 5) == IOPFL_ERR_SHAPE);
  EXPECT(iopfl_model_forward(m, x, 1, 2, 8, 8, y, 2 * 64) == IOPFL_ERR_SHAPE);

  const char* prefix = "test_capi_model";
  EXPECT(iopfl_model_save(m, prefix) == IOPFL_OK);
  iopfl_model* back = NULL;
  EXPECT(iopfl_model_load(prefix, &back) == IOPFL_OK);
  EXPECT(iopfl_model_forward(back, x, 2, 1, 8, 8, z, 2 * 2 * 64) == IOPFL_OK);
  EXPECT(memcmp(y, z, sizeof y) == 0);
  remove("test_capi_model.bin");
  remove("test_capi_model.json");
  EXPECT(iopfl_model_load("no_such_model", &back) == IOPFL_ERR_IO);
  iopfl_model_free(back);
  iopfl_model_free(m);
}

static void test_dice(void) {
  const int32_t pred[10] = {1, 1, 1, 1, 1, 1, 0, 0, 0, 0};
  const int32_t gt[10] = {0, 0, 0, 1, 1, 1, 1, 0, 0, 0};
  double d = -1;
  EXPECT(iopfl_dice(pred, gt, 10, 1, &d) == IOPFL_OK);
  EXPECT(fabs(d - 0.6) < 1e-15);
  const int32_t zeros[4] = {0, 0, 0, 0};
  EXPECT(iopfl_dice(zeros, zeros, 4, 1, &d) == IOPFL_OK && d == 1.0);
}

static void test_report_errors(void) {
  EXPECT(iopfl_report("/nonexistent/results", "/tmp/unused_report") == IOPFL_ERR_IO);
}

int main(void) {
  test_status_contract();
  test_config();
  test_model();
  test_dice();
  test_report_errors();
  if (failures) {
    fprintf(stderr, "%d expectation(s) failed\n", failures);
    return 1;
  }
  printf("C API: all expectations passed\n");
  return 0;
}

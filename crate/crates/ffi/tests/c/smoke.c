#include <math.h>
#include <stdio.h>
#include <string.h>

#include "lorga.h"

#define CHECK(expr)                                                            \
  do {                                                                         \
    LorgaStatus s_ = (expr);                                                   \
    if (s_ != LORGA_STATUS_OK) {                                               \
      const char *m_ = lorga_last_error_message();                             \
      fprintf(stderr, "%s:%d: status %d: %s\n", __FILE__, __LINE__, (int)s_,  \
              m_ ? m_ : "(none)");                                             \
      return 1;                                                                \
    }                                                                          \
  } while (0)

int main(void) {
  /* diag(3, 2) padded to 2x3 */
  double data[6] = {3.0, 0.0, 0.0, 0.0, 2.0, 0.0};
  LorgaMatrix *m = NULL;
  CHECK(lorga_matrix_new(2, 3, data, &m));

  double sv[2];
  size_t n = 0;
  CHECK(lorga_matrix_singular_values(m, sv, 2, &n));
  if (n != 2 || fabs(sv[0] - 3.0) > 1e-12 || fabs(sv[1] - 2.0) > 1e-12) {
    fprintf(stderr, "bad singular values\n");
    return 1;
  }

  if (lorga_matrix_new(2, 2, NULL, &m) != LORGA_STATUS_NULL_POINTER) {
    fprintf(stderr, "null data accepted\n");
    return 1;
  }
  if (lorga_last_error_message() == NULL) {
    fprintf(stderr, "no error message\n");
    return 1;
  }

  LorgaNetwork *net = NULL;
  CHECK(lorga_network_new(
      "{\"layer_dims\":[4,8,2],\"activation\":\"tanh\",\"loss\":\"mse\",\"init_seed\":3}",
      &net));

  double xs[4 * 16], ts[2 * 16];
  for (int i = 0; i < 64; i++) xs[i] = sin(0.37 * i);
  for (int i = 0; i < 32; i++) ts[i] = cos(0.21 * i);
  LorgaMatrix *x = NULL, *t = NULL;
  CHECK(lorga_matrix_new(4, 16, xs, &x));
  CHECK(lorga_matrix_new(2, 16, ts, &t));

  LorgaNetwork *adapted = NULL;
  char *report = NULL;
  CHECK(lorga_lora_ga_init(net,
                           "{\"rank\":1,\"alpha\":2,\"gamma\":4,\"sampled_batch_size\":8}",
                           x, t, &adapted, &report));
  if (report == NULL || strstr(report, "\"layers\"") == NULL) {
    fprintf(stderr, "missing report\n");
    return 1;
  }

  double before = 0.0, after = 0.0;
  CHECK(lorga_network_loss(net, x, t, &before));
  CHECK(lorga_network_loss(adapted, x, t, &after));
  if (fabs(before - after) > 1e-10 * (1.0 + fabs(before))) {
    fprintf(stderr, "initialization changed the loss: %g vs %g\n", before, after);
    return 1;
  }

  printf("ok %s\n", lorga_version());
  lorga_string_free(report);
  lorga_network_free(adapted);
  lorga_network_free(net);
  lorga_matrix_free(x);
  lorga_matrix_free(t);
  lorga_matrix_free(m);
  return 0;
}

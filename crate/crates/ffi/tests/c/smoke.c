#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "active_subspace.h"

#define CHECK(call)                                                        \
  do {                                                                     \
    AsStatus s_ = (call);                                                  \
    if (s_ != AS_STATUS_OK) {                                              \
      fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, as_last_error_message()); \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  AsSpace *space = NULL;
  AsMeasure *measure = NULL;
  AsFunctional *f = NULL;
  AsEstimate *est = NULL;

  CHECK(as_space_new_unit_square(17, 17, &space));
  CHECK(as_measure_new_separable_sine(space, 4, 2.0, 1.0, &measure));

  size_t modes[2] = {0, 1};
  double coeffs[2] = {3.0, 1.0};
  CHECK(as_functional_new_quadratic(measure, modes, coeffs, 2, &f));
  CHECK(as_estimate_new(f, measure, 64, 7, 1e-12, &est));

  size_t rank = as_estimate_rank(est);
  if (rank != 2) {
    fprintf(stderr, "rank %zu\n", rank);
    return 1;
  }
  double ev[2];
  CHECK(as_estimate_eigenvalues(est, ev, 2));
  if (!(ev[0] > ev[1] && ev[1] > 0.0)) {
    fprintf(stderr, "eigenvalues %g %g\n", ev[0], ev[1]);
    return 1;
  }

  if (as_space_new_unit_square(17, 17, NULL) != AS_STATUS_NULL_POINTER) return 1;
  if (as_measure_new_separable_sine(space, 4, 0.5, 1.0, &measure) != AS_STATUS_INVALID_ARGUMENT) return 1;
  if (as_last_error_message() == NULL) return 1;

  printf("version %s rank %zu sigma %.6e %.6e\n", as_version(), rank, ev[0], ev[1]);
  as_estimate_free(est);
  as_functional_free(f);
  as_measure_free(measure);
  as_space_free(space);
  return 0;
}

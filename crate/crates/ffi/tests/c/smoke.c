#include <stdio.h>
#include <string.h>
#include "socmarket.h"

#define CHECK(cond)                                               \
  do {                                                            \
    if (!(cond)) {                                                \
      fprintf(stderr, "check failed at line %d: %s\n", __LINE__, #cond); \
      return 1;                                                   \
    }                                                             \
  } while (0)

int main(void) {
  SmSegment segs[2] = {
      {0.5, 20.0, 0.25, 0.25, 0.9, 0.9},
      {1.0, 20.0, 0.25, 0.25, 0.9, 0.9},
  };
  SmStorage *h = NULL;
  CHECK(sm_storage_new(segs, 2, 0.0, &h) == SM_STATUS_OK);
  CHECK(sm_storage_set_soc(h, 1.0) == SM_STATUS_OK);

  double g[2] = {60.0, 40.0}, b[2] = {15.0, 10.0}, p[2], d[2], obj;
  CHECK(sm_storage_clear(h, g, b, 2, 50.0, 1, p, d, &obj) == SM_STATUS_OK);
  CHECK(d[0] == 0.0 && d[1] > 0.0);

  double soc;
  CHECK(sm_storage_soc(h, &soc) == SM_STATUS_OK);
  CHECK(soc < 1.0);

  CHECK(sm_storage_set_soc(h, 5.0) != SM_STATUS_OK);
  char msg[128];
  CHECK(sm_last_error_message(msg, sizeof msg) > 0);
  CHECK(strlen(msg) > 0);

  sm_storage_free(h);
  printf("ok %s\n", sm_version());
  return 0;
}

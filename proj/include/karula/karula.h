/*
 * Copyright 2026 The Karula Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


/* C interface to the Karula personalized federated learning library.
 *
 * Every function that can fail returns a karula_status. On failure the
 * message is available from karula_last_error() on the calling thread until
 * the next call into the library from that thread. */

#ifndef KARULA_KARULA_H_
#define KARULA_KARULA_H_

#include <stddef.h>
#include <stdint.h>

#if defined(KARULA_BUILDING_LIBRARY)
#define KARULA_API __attribute__((visibility("default")))
#else
#define KARULA_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum karula_status {
  KARULA_OK = 0,
  KARULA_ERR_CONFIG = 1,   /* configuration could not be parsed or validated */
  KARULA_ERR_RUNTIME = 2,  /* a stage failed while running */
  KARULA_ERR_CHECK = 3,    /* outputs were written but a requested check failed */
  KARULA_ERR_ARGUMENT = 4  /* null pointer, short buffer or malformed argument */
} karula_status;

typedef struct karula_config karula_config_t;

typedef struct karula_run_options {
  const char* out_root; /* NULL means "runs" */
  int check;            /* nonzero turns failed checks into KARULA_ERR_CHECK */
  int threads;          /* worker threads across repetitions, >= 1 */
  int has_seed;         /* nonzero restricts the stage to `seed` */
  uint64_t seed;
} karula_run_options;

KARULA_API const char* karula_version(void);
KARULA_API const char* karula_last_error(void);

/* Config handles. Each successful constructor must be paired with
 * karula_config_free. */
KARULA_API karula_status karula_config_default(const char* experiment, karula_config_t** out);
KARULA_API karula_status karula_config_load(const char* path, karula_config_t** out);
KARULA_API karula_status karula_config_parse(const char* text, const char* origin,
                                             karula_config_t** out);
KARULA_API void karula_config_free(karula_config_t* cfg);

/* Sets a dotted key such as "karula.rounds" to a JSON literal. A value that
 * is not valid JSON is taken as a string. */
KARULA_API karula_status karula_config_set(karula_config_t* cfg, const char* key,
                                           const char* json_value);
KARULA_API karula_status karula_config_validate(const karula_config_t* cfg);

/* Writes the 16-hex-digit hash and a terminating NUL; len must be >= 17. */
KARULA_API karula_status karula_config_hash(const karula_config_t* cfg, char* buf, size_t len);

/* Writes the canonical JSON form. *needed receives the size including the
 * NUL; pass buf = NULL to query it. */
KARULA_API karula_status karula_config_dump(const karula_config_t* cfg, char* buf, size_t len,
                                            size_t* needed);

KARULA_API void karula_run_options_init(karula_run_options* opts);

/* stage is one of gen-data, dissim, cv, train, check-bound, report or run
 * (all stages in order). The status equals the process exit code the CLI
 * reports. */
KARULA_API karula_status karula_run_stage(const karula_config_t* cfg, const char* stage,
                                          const karula_run_options* opts);

/* Reads a projection request from input_path and writes the result JSON to
 * output_path, or to stdout when output_path is NULL. */
KARULA_API karula_status karula_project_test(const char* input_path, const char* output_path);

/* Exact W1 between two uniform empirical measures given as row-major
 * na x dim and nb x dim arrays. */
KARULA_API karula_status karula_wasserstein1(const double* a, size_t na, const double* b,
                                             size_t nb, size_t dim, double* out);

#ifdef __cplusplus
}
#endif

#endif /* KARULA_KARULA_H_ */

#ifndef ALCHEMY_ALCHEMY_H
#define ALCHEMY_ALCHEMY_H

/* C interface to the alchemy library.
 *
 * Every fallible call returns an alc_status. On failure the message is
 * available from alc_last_error() (thread-local, valid until the next call on
 * the same thread). Strings returned through char** out-parameters are
 * allocated with malloc and must be released with alc_string_free(). */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define ALC_API __declspec(dllexport)
#else
#define ALC_API __attribute__((visibility("default")))
#endif

typedef enum alc_status {
  ALC_OK = 0,
  ALC_INVALID_ARGUMENT = 1,
  ALC_NOT_APPLICABLE = 2,
  ALC_GENERATION_EXHAUSTED = 3,
  ALC_PARSE_ERROR = 4,
  ALC_IO_ERROR = 5,
  ALC_INVALID_CONFIG = 6,
  ALC_DIVERGENCE = 7,
  ALC_EPISODE_TOO_LONG = 8,
  ALC_MISSING_METRIC = 9,
  ALC_INCOMPATIBLE_KIND = 10,
  ALC_MISSING_ORACLE_CONTEXT = 11,
  ALC_SHAPE_MISMATCH = 12,
  ALC_EMPTY_POOL = 13,
  ALC_INTERNAL = 99
} alc_status;

typedef struct alc_chemistry alc_chemistry;
typedef struct alc_model alc_model;

typedef struct alc_stone {
  uint8_t color;
  uint8_t size;
  uint8_t roundness;
  uint8_t reward_level;
} alc_stone;

ALC_API const char* alc_version(void);
ALC_API const char* alc_last_error(void);
ALC_API const char* alc_status_string(alc_status status);
ALC_API void alc_string_free(char* s);

/* Chemistries. Vertices are 0..7, potion colours 0..5
 * (RED, GREEN, YELLOW, ORANGE, PINK, BLUE). */
ALC_API alc_status alc_chemistry_generate(uint64_t seed, alc_chemistry** out);
ALC_API alc_status alc_chemistry_from_json(const char* line, alc_chemistry** out);
ALC_API alc_status alc_chemistry_to_json(const alc_chemistry* chem, char** out);
ALC_API alc_status alc_chemistry_stone(const alc_chemistry* chem, int vertex, alc_stone* out);
/* Applies a potion sequence; *out_vertex receives the end vertex. */
ALC_API alc_status alc_chemistry_apply(const alc_chemistry* chem, int vertex, const int* potions, size_t n,
                                       int* out_vertex);
/* Bitmask over vertices reachable in exactly k applicable hops (start excluded). */
ALC_API alc_status alc_reachable_set(int vertex, int k, uint8_t* out_mask);
/* *out_violations receives the number of violated invariants (0 = valid). */
ALC_API alc_status alc_chemistry_validate(const alc_chemistry* chem, int* out_violations);
ALC_API void alc_chemistry_free(alc_chemistry* chem);

ALC_API alc_status alc_stone_index(alc_stone stone, int* out_index);
ALC_API alc_status alc_stone_decode(int index, alc_stone* out);

/* Models. config_json may be NULL or "" for defaults. */
ALC_API alc_status alc_model_create(const char* config_json, uint64_t seed, alc_model** out);
ALC_API alc_status alc_model_parameter_count(const alc_model* model, size_t* out);
/* tokens: batch x seq_len row-major. logits: batch x seq_len x n_classes,
 * caller-allocated with logits_len elements. */
ALC_API alc_status alc_model_forward(const alc_model* model, const int32_t* tokens, size_t batch, size_t seq_len,
                                     float* logits, size_t logits_len);
ALC_API void alc_model_free(alc_model* model);

/* Commands. Each takes a JSON request and returns a JSON response.
 *   generate / train: {"config": {...} | "config_path": "...",
 *                      "overrides": {"a.b": v}, "fresh": bool, "verbose": bool}
 *   sweep:            same, the config carrying "grid"/"points"
 *   evaluate:         {"episodes", "chemistries", "predictions" | "chance"}
 *   export_plots:     {"runs": [...], "out_dir", "split", "metrics"}
 *   validate:         {"path", "chemistries"}
 * On failure *response may still hold a partial JSON result (or NULL). */
ALC_API alc_status alc_cmd_generate(const char* request_json, char** response);
ALC_API alc_status alc_cmd_train(const char* request_json, char** response);
ALC_API alc_status alc_cmd_sweep(const char* request_json, char** response);
ALC_API alc_status alc_cmd_evaluate(const char* request_json, char** response);
ALC_API alc_status alc_cmd_export_plots(const char* request_json, char** response);
ALC_API alc_status alc_cmd_validate(const char* request_json, char** response);

#ifdef __cplusplus
}
#endif

#endif

/* C ABI for the pastanet shared library: opaque handles, integer status
 * codes, thread-local error messages. Command-level entry points take a JSON
 * configuration string (unknown keys rejected) and return a JSON report
 * allocated with pastanet_string_new; free it with pastanet_string_free. */
#ifndef PASTANET_CAPI_H
#define PASTANET_CAPI_H

#include <stddef.h>
#include <stdint.h>

#if defined(__GNUC__)
#define PASTANET_API __attribute__((visibility("default")))
#else
#define PASTANET_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status values double as process exit codes: 2 usage, 3 data, 4 numeric. */
typedef enum pastanet_status {
  PASTANET_OK = 0,
  PASTANET_ERR_USAGE = 2,
  PASTANET_ERR_DATA = 3,
  PASTANET_ERR_NUMERIC = 4,
  PASTANET_ERR_INTERNAL = 5
} pastanet_status;

PASTANET_API const char* pastanet_version(void);

/* Message for the last failing call on this thread ("" if none). */
PASTANET_API const char* pastanet_last_error(void);

PASTANET_API void pastanet_string_free(char* s);

/* ---------------------------------------------------------------- vocab -- */

typedef struct pastanet_vocab pastanet_vocab;

PASTANET_API pastanet_status pastanet_vocab_default(pastanet_vocab** out);
PASTANET_API pastanet_status pastanet_vocab_load_json(const char* path, pastanet_vocab** out);
PASTANET_API pastanet_status pastanet_vocab_save_json(const pastanet_vocab* vocab,
                                                      const char* path);
PASTANET_API void pastanet_vocab_free(pastanet_vocab* vocab);
PASTANET_API int pastanet_vocab_total(const pastanet_vocab* vocab);
/* Verb count for one of: head, arm, hand, hip, thigh, foot. -1 on error. */
PASTANET_API int pastanet_vocab_size(const pastanet_vocab* vocab, const char* part_type);

/* ------------------------------------------------------- corpus and kb -- */

typedef struct pastanet_corpus pastanet_corpus;

PASTANET_API pastanet_status pastanet_corpus_load_jsonl(const char* path,
                                                        const pastanet_vocab* vocab,
                                                        pastanet_corpus** out);
PASTANET_API void pastanet_corpus_free(pastanet_corpus* corpus);
PASTANET_API size_t pastanet_corpus_num_images(const pastanet_corpus* corpus);
PASTANET_API size_t pastanet_corpus_num_persons(const pastanet_corpus* corpus);

typedef struct pastanet_kb pastanet_kb;

/* Person-level NPMI co-occurrence statistics over a corpus. */
PASTANET_API pastanet_status pastanet_kb_build(const pastanet_corpus* corpus,
                                               const pastanet_vocab* vocab, pastanet_kb** out);
PASTANET_API pastanet_status pastanet_kb_load_json(const char* path, pastanet_kb** out);
PASTANET_API void pastanet_kb_free(pastanet_kb* kb);
PASTANET_API pastanet_status pastanet_kb_save_json(const pastanet_kb* kb, const char* path);
/* out_defined is 0 when the pair never co-occurs (value then unset). */
PASTANET_API pastanet_status pastanet_kb_npmi(const pastanet_kb* kb, const char* activity,
                                              const char* part_type, const char* verb,
                                              double* out_value, int* out_defined);
/* Parsing tree: edges with NPMI >= threshold, written as JSON. */
PASTANET_API pastanet_status pastanet_kb_save_tree_json(const pastanet_kb* kb, double threshold,
                                                        const char* path);
/* Top-k candidates by max-over-activities NPMI, as a JSON array string. */
PASTANET_API pastanet_status pastanet_kb_select_candidates(const pastanet_kb* kb, size_t k,
                                                           char** json_out);

/* ------------------------------------------------------------- geometry -- */

/* joints: 17 x (x, y, confidence), COCO order. out_boxes: 10 x (x1,y1,x2,y2)
 * in part order head, r/l upper arm, r/l hand, hip, r/l thigh, r/l foot.
 * scale may be NULL for the default per-part-type factors. */
PASTANET_API pastanet_status pastanet_part_boxes(const double joints[51],
                                                 double visibility_threshold,
                                                 const double scale[6], double image_width,
                                                 double image_height, double out_boxes[40],
                                                 int out_visible[10]);

PASTANET_API double pastanet_box_iou(const double a[4], const double b[4]);

/* -------------------------------------------------------------- metrics -- */

/* Ranked AP over binary labels; out_defined is 0 when there is no positive. */
PASTANET_API pastanet_status pastanet_average_precision(const double* scores, const int* labels,
                                                        size_t n, double* out_ap,
                                                        int* out_defined);

/* ------------------------------------------- command-level entry points -- */

/* Generate the MNIST-Action dataset (IDX canvases + JSON-lines sidecars). */
PASTANET_API pastanet_status pastanet_mnist_gen(const char* config_json, char** report_json);

/* Train one MNIST-Action variant and report test accuracy. */
PASTANET_API pastanet_status pastanet_mnist_train(const char* config_json, char** report_json);

/* Generate the synthetic part-state corpus: annotations, features, tree. */
PASTANET_API pastanet_status pastanet_featgen(const char* config_json, char** report_json);

/* Train the part-state pipeline (recognition + Activity2Vec + reasoning). */
PASTANET_API pastanet_status pastanet_train_pasta(const char* config_json, char** report_json);

/* Evaluate a saved pipeline checkpoint on a regenerated corpus. */
PASTANET_API pastanet_status pastanet_eval_pasta(const char* config_json, char** report_json);

/* 64-bit gradient verification battery; report lists each layer check. */
PASTANET_API pastanet_status pastanet_gradcheck(char** report_json);

/* Gradient checks plus oracle spot checks. */
PASTANET_API pastanet_status pastanet_selftest(uint64_t seed, char** report_json);

#ifdef __cplusplus
}
#endif

#endif /* PASTANET_CAPI_H */

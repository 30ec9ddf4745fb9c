#ifndef DSG_H
#define DSG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success.
typedef enum DsgStatus {
  DSG_STATUS_OK = 0,
  DSG_STATUS_NULL_POINTER = 1,
  DSG_STATUS_INVALID_UTF8 = 2,
  // Malformed JSON or annotation text.
  DSG_STATUS_PARSE = 3,
  // The input parsed but violates a graph invariant, e.g. a cycle.
  DSG_STATUS_INVALID_GRAPH = 4,
  // The caller's buffer is too small; the required length was written out.
  DSG_STATUS_BUFFER_TOO_SMALL = 5,
  DSG_STATUS_INVALID_ARGUMENT = 6,
  // Statistics are undefined for the input, e.g. a constant vector.
  DSG_STATUS_UNDEFINED = 7,
  DSG_STATUS_PANIC = 8,
} DsgStatus;

// How questions below a failed parent are treated.
typedef enum DsgScoreMode {
  // Children of a failed parent are never asked.
  DSG_SCORE_MODE_SKIP = 0,
  // Everything is asked, then children of failed parents are zeroed.
  DSG_SCORE_MODE_ZERO_OUT = 1,
} DsgScoreMode;

// Opaque graph handle.
typedef struct DsgGraph DsgGraph;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// The message of the last failed call on this thread, or null. The pointer
// stays valid until the next call into this library on the same thread.
const char *dsg_last_error(void);

// Parses a graph from its JSON record form.
//
// # Safety
// `json` must be a NUL-terminated string and `out` a valid pointer.
enum DsgStatus dsg_graph_from_json(const char *json, struct DsgGraph **out);

// Builds a graph from the three line-based annotation texts.
// `lenient` drops malformed lines instead of failing.
//
// # Safety
// All strings must be NUL-terminated and `out` a valid pointer.
enum DsgStatus dsg_graph_from_annotations(const char *prompt_id,
                                          const char *tuples,
                                          const char *questions,
                                          const char *dependencies,
                                          bool lenient,
                                          struct DsgGraph **out);

// Releases a graph. Null is ignored.
//
// # Safety
// `g` must come from this library and not be used afterwards.
void dsg_graph_free(struct DsgGraph *g);

// Number of questions; 0 for null.
//
// # Safety
// `g` must be null or a live handle.
size_t dsg_graph_question_count(const struct DsgGraph *g);

// Writes the question ids in evaluation order. `*len` holds the buffer
// capacity on entry and the number of ids on return; a short buffer yields
// `BufferTooSmall` with nothing written.
//
// # Safety
// `buf` must hold `*len` elements.
enum DsgStatus dsg_graph_topological_order(const struct DsgGraph *g, uint32_t *buf, size_t *len);

// Serializes the graph to its JSON record form. Free with `dsg_string_free`.
//
// # Safety
// `out` must be a valid pointer.
enum DsgStatus dsg_graph_to_json(const struct DsgGraph *g, char **out);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void dsg_string_free(char *s);

// Scores one set of yes/no answers against the graph.
//
// `answers[i]` is nonzero when question `i + 1` was answered yes; `scores`
// receives the final 0/1 score of each question in the same layout. Both
// arrays must hold exactly `n` elements, `n` being the question count.
// The mean score goes to `average`.
//
// # Safety
// `answers` and `scores` must each hold `n` elements.
enum DsgStatus dsg_graph_evaluate(const struct DsgGraph *g,
                                  const uint8_t *answers,
                                  size_t n,
                                  enum DsgScoreMode mode,
                                  uint8_t *scores,
                                  double *average);

// Spearman's rho with average ranks for ties.
//
// # Safety
// `x` and `y` must each hold `n` elements.
enum DsgStatus dsg_spearman(const double *x, const double *y, size_t n, double *out);

// Kendall's tau-b.
//
// # Safety
// `x` and `y` must each hold `n` elements.
enum DsgStatus dsg_kendall(const double *x, const double *y, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DSG_H */

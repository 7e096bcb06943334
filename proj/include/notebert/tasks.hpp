#pragma once

#include <map>
#include <string>
#include <vector>

#include "notebert/common.hpp"

namespace notebert {

/// Inclusive token-index span with an entity class label (never "O").
struct Span {
  int start = 0;
  int end = 0;  // inclusive
  std::string label;

  bool operator==(const Span& o) const {
    return start == o.start && end == o.end && label == o.label;
  }
  bool operator<(const Span& o) const {
    if (start != o.start) return start < o.start;
    if (end != o.end) return end < o.end;
    return label < o.label;
  }
};

struct TaggedSentence {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;  // parallel IOB labels
};

enum class TaskKind { span_labeling, nli };

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::span_labeling;
  std::vector<std::string> classes;  // entity classes or NLI labels
  std::string metric;                // "exact_f1" or "accuracy"

  /// Span tasks: 2*|classes|+1 (B-/I- per class plus O). NLI: |classes|.
  int label_dim() const {
    return kind == TaskKind::span_labeling ? 2 * static_cast<int>(classes.size()) + 1
                                           : static_cast<int>(classes.size());
  }

  /// Tag alphabet id mapping for span tasks: O=0, then B-c,I-c per class in
  /// declared order.
  std::vector<std::string> tag_names() const;
  int tag_id(const std::string& tag) const;  // -1 when unknown
};

enum class DecodeMode { strict, lenient };

std::vector<std::string> iob_encode(const std::vector<Span>& spans, int length);

std::vector<Span> iob_decode(const std::vector<std::string>& tags, DecodeMode mode);

struct ClassScore {
  long tp = 0, pred = 0, gold = 0;
  double precision = 0, recall = 0, f1 = 0;
};

struct SpanF1Report {
  double precision = 0, recall = 0, f1 = 0;  // micro over all classes
  long tp = 0, pred_total = 0, gold_total = 0;
  std::map<std::string, ClassScore> per_class;

  std::string to_json() const;
};

SpanF1Report exact_span_f1(const std::vector<std::vector<Span>>& gold,
                           const std::vector<std::vector<Span>>& pred);

double nli_accuracy(const std::vector<std::string>& gold,
                    const std::vector<std::string>& pred);

struct NliExample {
  std::string premise;
  std::string hypothesis;
  std::string label;
};

// CoNLL-style file: one "token<TAB>tag" per line, blank line between
// sentences. Tags are validated against the task's alphabet.
std::vector<TaggedSentence> load_span_task(const std::string& path, const TaskSpec& spec);
void save_span_task(const std::vector<TaggedSentence>& sentences, const std::string& path);

// TSV with a "premise\thypothesis\tlabel" header row.
std::vector<NliExample> load_nli_task(const std::string& path, const TaskSpec& spec);
void save_nli_task(const std::vector<NliExample>& examples, const std::string& path);

}  // namespace notebert

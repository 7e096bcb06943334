#include "notebert/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace notebert {

std::vector<std::string> TaskSpec::tag_names() const {
  std::vector<std::string> names = {"O"};
  for (const auto& c : classes) {
    names.push_back("B-" + c);
    names.push_back("I-" + c);
  }
  return names;
}

int TaskSpec::tag_id(const std::string& tag) const {
  if (tag == "O") return 0;
  for (size_t i = 0; i < classes.size(); ++i) {
    if (tag == "B-" + classes[i]) return static_cast<int>(2 * i + 1);
    if (tag == "I-" + classes[i]) return static_cast<int>(2 * i + 2);
  }
  return -1;
}

std::vector<std::string> iob_encode(const std::vector<Span>& spans, int length) {
  std::vector<Span> sorted = spans;
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 0; i < sorted.size(); ++i) {
    const Span& s = sorted[i];
    if (s.start < 0 || s.end < s.start || s.end >= length)
      throw DataError("iob_encode: span out of range");
    if (s.label.empty() || s.label == "O")
      throw DataError("iob_encode: invalid span label");
    if (i > 0 && sorted[i - 1].end >= s.start)
      throw DataError("iob_encode: overlapping spans");
  }
  std::vector<std::string> tags(static_cast<size_t>(length), "O");
  for (const Span& s : sorted) {
    tags[static_cast<size_t>(s.start)] = "B-" + s.label;
    for (int i = s.start + 1; i <= s.end; ++i) tags[static_cast<size_t>(i)] = "I-" + s.label;
  }
  return tags;
}

std::vector<Span> iob_decode(const std::vector<std::string>& tags, DecodeMode mode) {
  std::vector<Span> spans;
  int cur_start = -1;
  std::string cur_label;
  auto close = [&](int end) {
    if (cur_start >= 0) spans.push_back({cur_start, end, cur_label});
    cur_start = -1;
    cur_label.clear();
  };
  for (size_t i = 0; i < tags.size(); ++i) {
    const std::string& t = tags[i];
    if (t == "O") {
      close(static_cast<int>(i) - 1);
    } else if (t.rfind("B-", 0) == 0) {
      close(static_cast<int>(i) - 1);
      cur_start = static_cast<int>(i);
      cur_label = t.substr(2);
    } else if (t.rfind("I-", 0) == 0) {
      std::string label = t.substr(2);
      if (cur_start >= 0 && label == cur_label) continue;  // span continues
      if (mode == DecodeMode::strict)
        throw DataError("iob_decode: ill-formed I-" + label + " at index " + std::to_string(i));
      // Lenient: an orphan I- opens a new span.
      close(static_cast<int>(i) - 1);
      cur_start = static_cast<int>(i);
      cur_label = std::move(label);
    } else {
      if (mode == DecodeMode::strict)
        throw DataError("iob_decode: unknown tag '" + t + "' at index " + std::to_string(i));
      close(static_cast<int>(i) - 1);  // lenient: treat like O
    }
  }
  close(static_cast<int>(tags.size()) - 1);
  return spans;
}

SpanF1Report exact_span_f1(const std::vector<std::vector<Span>>& gold,
                           const std::vector<std::vector<Span>>& pred) {
  if (gold.size() != pred.size())
    throw DataError("exact_span_f1: sentence count mismatch (" + std::to_string(gold.size()) +
                    " gold vs " + std::to_string(pred.size()) + " pred)");
  SpanF1Report r;
  for (size_t s = 0; s < gold.size(); ++s) {
    std::multiset<Span> gold_set(gold[s].begin(), gold[s].end());
    for (const Span& p : pred[s]) {
      r.pred_total++;
      r.per_class[p.label].pred++;
      auto it = gold_set.find(p);
      if (it != gold_set.end()) {
        gold_set.erase(it);
        r.tp++;
        r.per_class[p.label].tp++;
      }
    }
    for (const Span& g : gold[s]) {
      r.gold_total++;
      r.per_class[g.label].gold++;
    }
  }
  auto prf = [](long tp, long pred_n, long gold_n, double& p, double& rec, double& f1) {
    p = pred_n > 0 ? static_cast<double>(tp) / static_cast<double>(pred_n) : 0.0;
    rec = gold_n > 0 ? static_cast<double>(tp) / static_cast<double>(gold_n) : 0.0;
    f1 = (p + rec) > 0 ? 2.0 * p * rec / (p + rec) : 0.0;
  };
  prf(r.tp, r.pred_total, r.gold_total, r.precision, r.recall, r.f1);
  for (auto& [label, cs] : r.per_class)
    prf(cs.tp, cs.pred, cs.gold, cs.precision, cs.recall, cs.f1);
  return r;
}

std::string SpanF1Report::to_json() const {
  nlohmann::json j;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  j["tp"] = tp;
  j["pred_total"] = pred_total;
  j["gold_total"] = gold_total;
  j["per_class"] = nlohmann::json::object();
  for (const auto& [label, cs] : per_class) {
    j["per_class"][label] = {{"tp", cs.tp},           {"pred", cs.pred},
                             {"gold", cs.gold},       {"precision", cs.precision},
                             {"recall", cs.recall},   {"f1", cs.f1}};
  }
  return j.dump(2) + "\n";
}

double nli_accuracy(const std::vector<std::string>& gold,
                    const std::vector<std::string>& pred) {
  if (gold.size() != pred.size()) throw DataError("nli_accuracy: length mismatch");
  if (gold.empty()) return 0.0;
  size_t correct = 0;
  for (size_t i = 0; i < gold.size(); ++i)
    if (gold[i] == pred[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

std::vector<TaggedSentence> load_span_task(const std::string& path, const TaskSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open task file: " + path);
  std::vector<TaggedSentence> sentences;
  TaggedSentence cur;
  std::string line;
  size_t line_no = 0;
  auto flush = [&]() {
    if (!cur.tokens.empty()) {
      sentences.push_back(cur);
      cur = TaggedSentence{};
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
      continue;
    }
    size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw DataError(path + ":" + std::to_string(line_no) + ": expected token<TAB>tag");
    std::string token = line.substr(0, tab);
    std::string tag = line.substr(tab + 1);
    if (spec.tag_id(tag) < 0)
      throw DataError(path + ":" + std::to_string(line_no) + ": tag '" + tag +
                      "' not in task '" + spec.name + "' alphabet");
    cur.tokens.push_back(std::move(token));
    cur.tags.push_back(std::move(tag));
  }
  flush();
  return sentences;
}

void save_span_task(const std::vector<TaggedSentence>& sentences, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write task file: " + path);
  for (const auto& s : sentences) {
    for (size_t i = 0; i < s.tokens.size(); ++i)
      out << s.tokens[i] << "\t" << s.tags[i] << "\n";
    out << "\n";
  }
}

std::vector<NliExample> load_nli_task(const std::string& path, const TaskSpec& spec) {
  auto lines = read_lines(path);
  if (lines.empty()) throw DataError("empty NLI file: " + path);
  if (lines[0] != "premise\thypothesis\tlabel")
    throw DataError(path + ": expected header 'premise\\thypothesis\\tlabel'");
  std::set<std::string> valid(spec.classes.begin(), spec.classes.end());
  std::vector<NliExample> out;
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    std::istringstream ss(lines[i]);
    NliExample ex;
    if (!std::getline(ss, ex.premise, '\t') || !std::getline(ss, ex.hypothesis, '\t') ||
        !std::getline(ss, ex.label, '\t'))
      throw DataError(path + ":" + std::to_string(i + 1) + ": ragged record");
    if (!valid.count(ex.label))
      throw DataError(path + ":" + std::to_string(i + 1) + ": unknown label '" + ex.label + "'");
    out.push_back(std::move(ex));
  }
  return out;
}

void save_nli_task(const std::vector<NliExample>& examples, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write NLI file: " + path);
  out << "premise\thypothesis\tlabel\n";
  for (const auto& ex : examples)
    out << ex.premise << "\t" << ex.hypothesis << "\t" << ex.label << "\n";
}

}  // namespace notebert

#include "notebert/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

namespace notebert {

namespace {

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

Note note_from_json(const nlohmann::json& j) {
  Note n;
  n.id = j.at("id").get<std::string>();
  n.note_type = j.at("note_type").get<std::string>();
  n.text = j.at("text").get<std::string>();
  return n;
}

// RFC 4180 style: quoted fields may contain commas, quotes ("") and newlines.
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  size_t i = 0;
  auto end_field = [&]() {
    row.push_back(field);
    field.clear();
    field_started = false;
  };
  auto end_row = [&]() {
    end_field();
    rows.push_back(row);
    row.clear();
  };
  while (i < text.size()) {
    char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
      ++i;
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        field_started = true;
        ++i;
        break;
      case ',':
        end_field();
        ++i;
        break;
      case '\r':
        ++i;
        break;
      case '\n':
        end_row();
        ++i;
        break;
      default:
        field.push_back(c);
        field_started = true;
        ++i;
    }
  }
  if (in_quotes) throw DataError("unterminated quoted field in CSV");
  if (field_started || !field.empty() || !row.empty()) end_row();
  return rows;
}

}  // namespace

NoteCollection ingest_notes(const std::string& path, NoteFormat format,
                            const IngestOptions& opts) {
  NoteCollection out;
  std::unordered_set<std::string> seen_ids;

  auto admit = [&](Note&& n, size_t record_no) {
    if (n.text.empty()) {
      if (opts.strict || opts.reject_empty)
        throw DataError("empty text in record " + std::to_string(record_no) + " of " + path);
      ++out.skipped;
      return;
    }
    if (!seen_ids.insert(n.id).second) {
      if (opts.strict)
        throw DataError("duplicate note id '" + n.id + "' in " + path);
      ++out.skipped;
      return;
    }
    out.notes.push_back(std::move(n));
  };

  if (format == NoteFormat::jsonl) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (is_blank(line)) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("id") ||
          !j.contains("note_type") || !j.contains("text") ||
          !j["id"].is_string() || !j["note_type"].is_string() || !j["text"].is_string()) {
        if (opts.strict)
          throw DataError("malformed record at " + path + ":" + std::to_string(line_no));
        ++out.skipped;
        continue;
      }
      admit(note_from_json(j), line_no);
    }
  } else {
    auto rows = parse_csv(read_file(path));
    if (rows.empty()) throw DataError("empty CSV file: " + path);
    const auto& header = rows[0];
    auto col = [&](const std::string& name) -> int {
      for (size_t c = 0; c < header.size(); ++c)
        if (header[c] == name) return static_cast<int>(c);
      return -1;
    };
    int id_col = col("id"), type_col = col("note_type"), text_col = col("text");
    if (id_col < 0 || type_col < 0 || text_col < 0)
      throw DataError("CSV header must contain id,note_type,text columns: " + path);
    for (size_t r = 1; r < rows.size(); ++r) {
      const auto& row = rows[r];
      size_t need = static_cast<size_t>(std::max({id_col, type_col, text_col})) + 1;
      if (row.size() < need) {
        if (opts.strict)
          throw DataError("ragged CSV record " + std::to_string(r) + " in " + path);
        ++out.skipped;
        continue;
      }
      Note n{row[static_cast<size_t>(id_col)], row[static_cast<size_t>(type_col)],
             row[static_cast<size_t>(text_col)]};
      admit(std::move(n), r);
    }
  }
  return out;
}

NoteCollection filter_by_note_type(const NoteCollection& collection,
                                   const std::set<std::string>& types) {
  if (types.empty()) throw ConfigError("filter_by_note_type: empty type set");
  NoteCollection out;
  for (const auto& n : collection.notes)
    if (types.count(n.note_type)) out.notes.push_back(n);
  return out;
}

namespace {

// A line is a header iff it has at most max_header_tokens whitespace-separated
// tokens and either ends with ':' or consists entirely of uppercase
// letters/digits/punctuation (at least one letter).
bool is_header_line(std::string_view line, const SectionizerOptions& opts) {
  std::string t = trim(line);
  if (t.empty()) return false;
  auto tokens = split_ws(t);
  if (tokens.size() > static_cast<size_t>(opts.max_header_tokens)) return false;
  if (t.back() == ':') return true;
  bool has_alpha = false;
  for (unsigned char c : t) {
    if (std::islower(c)) return false;
    if (std::isupper(c)) has_alpha = true;
    else if (!std::isdigit(c) && !std::ispunct(c) && c != ' ' && c != '\t') return false;
  }
  return has_alpha;
}

std::string header_text(std::string_view line) {
  std::string t = trim(line);
  if (!t.empty() && t.back() == ':') t.pop_back();
  return trim(t);
}

}  // namespace

std::vector<Section> sectionize(const Note& note, const SectionizerOptions& opts) {
  if (note.text.empty()) throw DataError("sectionize: empty note text (id=" + note.id + ")");
  const std::string& text = note.text;

  // Line starts, line spans (without trailing newline).
  struct Line {
    size_t begin, end;  // [begin, end) excludes the newline
  };
  std::vector<Line> lines;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t nl = text.find('\n', pos);
    size_t end = (nl == std::string::npos) ? text.size() : nl;
    lines.push_back({pos, end});
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }

  std::vector<size_t> header_idx;
  for (size_t i = 0; i < lines.size(); ++i) {
    std::string_view lv(text.data() + lines[i].begin, lines[i].end - lines[i].begin);
    if (is_header_line(lv, opts)) header_idx.push_back(i);
  }

  std::vector<Section> sections;
  auto push_section = [&](std::optional<std::string> header, size_t span_begin,
                          size_t body_begin, size_t span_end) {
    Section s;
    s.header = std::move(header);
    s.span_begin = span_begin;
    s.span_end = span_end;
    s.body_offset = std::min(body_begin, span_end);
    s.body = text.substr(s.body_offset, span_end - s.body_offset);
    s.empty_body = is_blank(s.body);
    sections.push_back(std::move(s));
  };

  if (header_idx.empty()) {
    push_section(std::nullopt, 0, 0, text.size());
    return sections;
  }

  // Leading unheadered content becomes its own section when non-blank.
  size_t first_hdr_begin = lines[header_idx[0]].begin;
  if (first_hdr_begin > 0 &&
      !is_blank(std::string_view(text.data(), first_hdr_begin))) {
    push_section(std::nullopt, 0, 0, first_hdr_begin);
  }

  for (size_t h = 0; h < header_idx.size(); ++h) {
    const Line& hline = lines[header_idx[h]];
    size_t span_end = (h + 1 < header_idx.size()) ? lines[header_idx[h + 1]].begin : text.size();
    size_t body_begin = std::min(hline.end + 1, span_end);  // skip the newline
    std::string_view lv(text.data() + hline.begin, hline.end - hline.begin);
    push_section(header_text(lv), hline.begin, body_begin, span_end);
  }
  return sections;
}

const std::set<std::string>& sentence_abbreviations() {
  static const std::set<std::string> abbrevs = {
      "dr.",  "mr.",   "mrs.",  "ms.",  "pt.",  "pts.",  "a.m.", "p.m.",
      "vs.",  "e.g.",  "i.e.",  "etc.", "q.d.", "b.i.d.", "t.i.d.", "q.i.d.",
      "p.o.", "i.v.",  "prn.",  "st.",  "ft.",  "no.",   "approx.", "w/o.",
      "resp.", "inc.", "jr.",   "sr.",  "mg.",  "ml.",   "oz.",  "lb.",
  };
  return abbrevs;
}

namespace {

// Token ending at (and including) position `dot` within body; scans back over
// non-whitespace.
std::string token_ending_at(const std::string& body, size_t dot) {
  size_t b = dot;
  while (b > 0 && !std::isspace(static_cast<unsigned char>(body[b - 1]))) --b;
  return to_lower(std::string_view(body).substr(b, dot - b + 1));
}

bool is_abbreviation_token(const std::string& tok) {
  if (sentence_abbreviations().count(tok)) return true;
  // Single-letter initial like "j."
  if (tok.size() == 2 && std::isalpha(static_cast<unsigned char>(tok[0])) && tok[1] == '.')
    return true;
  return false;
}

}  // namespace

std::vector<Sentence> split_sentences(const Section& section) {
  const std::string& body = section.body;
  std::vector<Sentence> out;
  if (body.empty()) return out;

  std::vector<std::pair<size_t, size_t>> raw;  // [begin, end)
  size_t start = 0;
  int sentinel_depth = 0;
  size_t i = 0;
  auto emit = [&](size_t end) {
    if (end > start) raw.emplace_back(start, end);
    start = end;
  };
  while (i < body.size()) {
    char c = body[i];
    if (body.compare(i, 2, "[*") == 0 && i + 2 < body.size() && body[i + 2] == '*') {
      ++sentinel_depth;
      i += 3;
      continue;
    }
    if (sentinel_depth > 0 && body.compare(i, 3, "**]") == 0) {
      --sentinel_depth;
      i += 3;
      continue;
    }
    if (sentinel_depth == 0 && (c == '.' || c == '!' || c == '?')) {
      size_t run_end = i;
      while (run_end + 1 < body.size() &&
             (body[run_end + 1] == '.' || body[run_end + 1] == '!' || body[run_end + 1] == '?'))
        ++run_end;
      bool followed_ok = (run_end + 1 >= body.size()) ||
                         std::isspace(static_cast<unsigned char>(body[run_end + 1]));
      bool abbrev = (c == '.' && run_end == i && is_abbreviation_token(token_ending_at(body, i)));
      if (followed_ok && !abbrev) {
        emit(run_end + 1);
        i = run_end + 1;
        continue;
      }
      i = run_end + 1;
      continue;
    }
    if (sentinel_depth == 0 && c == '\n') {
      // Paragraph break: newline, optional spaces, newline.
      size_t j = i + 1;
      while (j < body.size() && (body[j] == ' ' || body[j] == '\t' || body[j] == '\r')) ++j;
      if (j < body.size() && body[j] == '\n') {
        emit(i);
        while (j < body.size() && std::isspace(static_cast<unsigned char>(body[j]))) ++j;
        start = j;
        i = j;
        continue;
      }
    }
    ++i;
  }
  emit(body.size());

  for (auto [b, e] : raw) {
    while (b < e && std::isspace(static_cast<unsigned char>(body[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(body[e - 1]))) --e;
    if (e <= b) continue;
    Sentence s;
    s.text = body.substr(b, e - b);
    s.span_begin = b;
    s.span_end = e;
    out.push_back(std::move(s));
  }
  return out;
}

StatsReport note_type_stats(const NoteCollection& collection) {
  StatsReport r;
  r.total_notes = collection.size();
  for (const auto& n : collection.notes) {
    r.notes_by_type[n.note_type]++;
    auto sections = sectionize(n);
    r.total_sections += sections.size();
    for (size_t si = 0; si < sections.size(); ++si)
      r.total_sentences += split_sentences(sections[si]).size();
  }
  return r;
}

std::string StatsReport::to_json() const {
  nlohmann::json j;
  j["total_notes"] = total_notes;
  j["total_sections"] = total_sections;
  j["total_sentences"] = total_sentences;
  j["by_type"] = nlohmann::json::object();
  for (const auto& [k, v] : notes_by_type) j["by_type"][k] = v;
  return j.dump(2) + "\n";
}

std::string StatsReport::to_csv() const {
  std::ostringstream ss;
  ss << "type,count\n";
  for (const auto& [k, v] : notes_by_type) {
    std::string quoted = k;
    if (quoted.find(',') != std::string::npos || quoted.find('"') != std::string::npos) {
      std::string esc;
      for (char c : quoted) {
        if (c == '"') esc += "\"\"";
        else esc += c;
      }
      quoted = "\"" + esc + "\"";
    }
    ss << quoted << "," << v << "\n";
  }
  return ss.str();
}

void write_notes_jsonl(const NoteCollection& collection, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  for (const auto& n : collection.notes) {
    nlohmann::json j;
    j["id"] = n.id;
    j["note_type"] = n.note_type;
    j["text"] = n.text;
    out << j.dump() << "\n";
  }
}

}  // namespace notebert

#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "notebert/common.hpp"

namespace notebert {

struct Note {
  std::string id;
  std::string note_type;
  std::string text;
};

struct NoteCollection {
  std::vector<Note> notes;
  size_t skipped = 0;  // invalid records dropped during ingestion

  size_t size() const { return notes.size(); }
};

/// One semi-structured section of a note. char_span covers the header line
/// (when present) plus the body, as offsets into Note.text.
struct Section {
  std::optional<std::string> header;
  std::string body;
  size_t span_begin = 0;
  size_t span_end = 0;    // exclusive
  size_t body_offset = 0; // offset of body within Note.text
  bool empty_body = false;
};

struct Sentence {
  std::string text;
  size_t section_index = 0;
  size_t span_begin = 0;  // offsets into Section.body, trimmed extent
  size_t span_end = 0;    // exclusive
};

enum class NoteFormat { jsonl, csv };

struct IngestOptions {
  bool strict = false;        // malformed record -> error instead of skip
  bool reject_empty = false;  // strict handling of empty-text notes
};

struct SectionizerOptions {
  int max_header_tokens = 6;
};

struct StatsReport {
  std::map<std::string, size_t> notes_by_type;
  size_t total_notes = 0;
  size_t total_sections = 0;
  size_t total_sentences = 0;

  std::string to_json() const;
  std::string to_csv() const;  // two columns: type,count
};

NoteCollection ingest_notes(const std::string& path, NoteFormat format,
                            const IngestOptions& opts = {});

NoteCollection filter_by_note_type(const NoteCollection& collection,
                                   const std::set<std::string>& types);

std::vector<Section> sectionize(const Note& note, const SectionizerOptions& opts = {});

std::vector<Sentence> split_sentences(const Section& section);

StatsReport note_type_stats(const NoteCollection& collection);

// Serialization of a collection back to JSONL (canonical on-disk form).
void write_notes_jsonl(const NoteCollection& collection, const std::string& path);

// The abbreviation list consulted by the sentence splitter, lowercase, each
// entry ending with '.'.
const std::set<std::string>& sentence_abbreviations();

}  // namespace notebert

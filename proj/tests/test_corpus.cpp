#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "notebert/corpus.hpp"
#include "notebert/rng.hpp"

using namespace notebert;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

NoteCollection fixture_collection() {
  NoteCollection c;
  c.notes.push_back({"d1", "Discharge Summary", "CHIEF COMPLAINT:\nchest pain\n\nHPI:\nworsening dyspnea"});
  c.notes.push_back({"d2", "Discharge Summary", "Pt is stable. Will monitor overnight."});
  c.notes.push_back({"d3", "Discharge Summary", "ASSESSMENT:\nsepsis resolving"});
  c.notes.push_back({"n1", "Nursing", "patient resting comfortably"});
  c.notes.push_back({"n2", "Nursing", "VITALS:\nbp 120/80. hr 74."});
  return c;
}

}  // namespace

TEST_CASE("ingest jsonl counts valid records") {
  auto path = temp_path("nb_notes.jsonl");
  write_text(path,
             R"({"id":"a","note_type":"Nursing","text":"stable overnight"})"
             "\n"
             R"({"id":"b","note_type":"Radiology","text":"clear lungs"})"
             "\n");
  auto c = ingest_notes(path, NoteFormat::jsonl);
  CHECK(c.size() == 2);
  CHECK(c.skipped == 0);
  CHECK(c.notes[0].id == "a");
  CHECK(c.notes[1].note_type == "Radiology");
}

TEST_CASE("ingest skips empty text in lenient mode") {
  auto path = temp_path("nb_notes_empty.jsonl");
  write_text(path,
             R"({"id":"a","note_type":"Nursing","text":""})"
             "\n"
             R"({"id":"b","note_type":"Nursing","text":"ok"})"
             "\n");
  auto c = ingest_notes(path, NoteFormat::jsonl);
  CHECK(c.size() == 1);
  CHECK(c.skipped == 1);
}

TEST_CASE("ingest strict mode rejects malformed records") {
  auto path = temp_path("nb_notes_bad.jsonl");
  write_text(path, "{\"id\":\"a\"}\n");
  CHECK_THROWS_AS(ingest_notes(path, NoteFormat::jsonl, {.strict = true}), DataError);
  auto lenient = ingest_notes(path, NoteFormat::jsonl);
  CHECK(lenient.size() == 0);
  CHECK(lenient.skipped == 1);
}

TEST_CASE("ingest csv handles quoted multi-line text") {
  auto path = temp_path("nb_notes.csv");
  write_text(path,
             "id,note_type,text\n"
             "a,Nursing,\"line one, with comma\nline two\"\n"
             "b,ECG,\"sinus rhythm\"\n");
  auto c = ingest_notes(path, NoteFormat::csv);
  REQUIRE(c.size() == 2);
  CHECK(c.notes[0].text == "line one, with comma\nline two");
  CHECK(c.notes[1].note_type == "ECG");
}

TEST_CASE("ingest missing file") {
  CHECK_THROWS_AS(ingest_notes("/nonexistent/notes.jsonl", NoteFormat::jsonl), DataError);
}

TEST_CASE("filter_by_note_type") {
  auto c = fixture_collection();
  auto only_ds = filter_by_note_type(c, {"Discharge Summary"});
  CHECK(only_ds.size() == 3);
  for (const auto& n : only_ds.notes) CHECK(n.note_type == "Discharge Summary");

  auto all = filter_by_note_type(c, {"Discharge Summary", "Nursing"});
  CHECK(all.size() == c.size());
  for (size_t i = 0; i < c.size(); ++i) CHECK(all.notes[i].id == c.notes[i].id);

  auto none = filter_by_note_type(c, {"Radiology"});
  CHECK(none.size() == 0);

  CHECK_THROWS_AS(filter_by_note_type(c, {}), ConfigError);
}

TEST_CASE("sectionize detects headers") {
  Note n{"x", "Nursing", "CHIEF COMPLAINT:\nchest pain\n\nHPI:\nworsening dyspnea"};
  auto sections = sectionize(n);
  REQUIRE(sections.size() == 2);
  CHECK(sections[0].header == "CHIEF COMPLAINT");
  CHECK(trim(sections[0].body) == "chest pain");
  CHECK(sections[1].header == "HPI");
  CHECK(trim(sections[1].body) == "worsening dyspnea");
}

TEST_CASE("sectionize without headers yields one headerless section") {
  Note n{"x", "Nursing", "patient resting comfortably"};
  auto sections = sectionize(n);
  REQUIRE(sections.size() == 1);
  CHECK_FALSE(sections[0].header.has_value());
  CHECK(sections[0].body == n.text);
}

TEST_CASE("sectionize header-only note keeps flagged empty section") {
  Note n{"x", "Nursing", "ALLERGIES:"};
  auto sections = sectionize(n);
  REQUIRE(sections.size() == 1);
  CHECK(sections[0].header == "ALLERGIES");
  CHECK(sections[0].empty_body);
}

TEST_CASE("sectionize leading text before first header") {
  Note n{"x", "Nursing", "admitted overnight\nPLAN:\nmonitor"};
  auto sections = sectionize(n);
  REQUIRE(sections.size() == 2);
  CHECK_FALSE(sections[0].header.has_value());
  CHECK(sections[1].header == "PLAN");
}

TEST_CASE("sections cover all non-whitespace text") {
  for (const auto& note : fixture_collection().notes) {
    auto sections = sectionize(note);
    std::vector<bool> covered(note.text.size(), false);
    size_t prev_end = 0;
    for (const auto& s : sections) {
      CHECK(s.span_begin >= prev_end);  // ordered, non-overlapping
      for (size_t i = s.span_begin; i < s.span_end; ++i) covered[i] = true;
      prev_end = s.span_end;
    }
    for (size_t i = 0; i < note.text.size(); ++i) {
      if (!std::isspace(static_cast<unsigned char>(note.text[i]))) CHECK(covered[i]);
    }
  }
}

TEST_CASE("sectionize is deterministic") {
  Note n{"x", "Nursing", "A:\none\n\nB:\ntwo"};
  auto s1 = sectionize(n);
  auto s2 = sectionize(n);
  REQUIRE(s1.size() == s2.size());
  for (size_t i = 0; i < s1.size(); ++i) {
    CHECK(s1[i].header == s2[i].header);
    CHECK(s1[i].body == s2[i].body);
    CHECK(s1[i].span_begin == s2[i].span_begin);
    CHECK(s1[i].span_end == s2[i].span_end);
  }
}

TEST_CASE("split_sentences basic boundaries") {
  Section s;
  s.body = "Pt is stable. Will monitor overnight.";
  auto sentences = split_sentences(s);
  REQUIRE(sentences.size() == 2);
  CHECK(sentences[0].text == "Pt is stable.");
  CHECK(sentences[1].text == "Will monitor overnight.");
}

TEST_CASE("split_sentences abbreviation suppression") {
  Section s;
  s.body = "Seen by Dr. Smith at 10 a.m. today.";
  auto sentences = split_sentences(s);
  REQUIRE(sentences.size() == 1);
  CHECK(sentences[0].text == s.body);
}

TEST_CASE("split_sentences empty body") {
  Section s;
  s.body = "";
  CHECK(split_sentences(s).empty());
}

TEST_CASE("split_sentences never splits inside a sentinel") {
  Section s;
  s.body = "Transferred to [**Hospital 3. West**] today. Stable now.";
  auto sentences = split_sentences(s);
  REQUIRE(sentences.size() == 2);
  CHECK(sentences[0].text == "Transferred to [**Hospital 3. West**] today.");
}

TEST_CASE("split_sentences paragraph breaks") {
  Section s;
  s.body = "no acute distress\n\ncontinue current meds";
  auto sentences = split_sentences(s);
  REQUIRE(sentences.size() == 2);
  CHECK(sentences[0].text == "no acute distress");
  CHECK(sentences[1].text == "continue current meds");
}

TEST_CASE("split after concatenate recovers the sentence set") {
  const std::vector<std::string> words = {"patient", "stable",   "monitor", "fluids",
                                          "improved", "afebrile", "alert",   "resting"};
  Rng rng(7);
  for (int round = 0; round < 50; ++round) {
    int n = rng.next_int(1, 6);
    std::vector<std::string> parts;
    std::string assembled;
    for (int i = 0; i < n; ++i) {
      std::string part;
      int len = rng.next_int(1, 5);
      for (int w = 0; w < len; ++w) {
        if (w) part += ' ';
        part += words[static_cast<size_t>(rng.next_below(words.size()))];
      }
      parts.push_back(part);
      if (i) assembled += " ";
      assembled += part + ".";
    }
    Section s;
    s.body = assembled;
    auto sentences = split_sentences(s);
    REQUIRE(sentences.size() == parts.size());
    for (size_t i = 0; i < parts.size(); ++i) CHECK(sentences[i].text == parts[i] + ".");
  }
}

TEST_CASE("sentence spans are ordered and within the body") {
  Section s;
  s.body = "First sentence. Second one here. Third.";
  auto sentences = split_sentences(s);
  size_t prev_end = 0;
  for (const auto& sent : sentences) {
    CHECK(sent.span_begin >= prev_end);
    CHECK(sent.span_end <= s.body.size());
    CHECK(s.body.substr(sent.span_begin, sent.span_end - sent.span_begin) == sent.text);
    prev_end = sent.span_end;
  }
}

TEST_CASE("note_type_stats counts") {
  auto c = fixture_collection();
  auto r = note_type_stats(c);
  CHECK(r.notes_by_type.at("Discharge Summary") == 3);
  CHECK(r.notes_by_type.at("Nursing") == 2);
  size_t sum = 0;
  for (const auto& [_, v] : r.notes_by_type) sum += v;
  CHECK(sum == c.size());
  CHECK(r.total_sections >= c.size());
  CHECK(r.total_sentences > 0);

  // Invariant to note order.
  NoteCollection shuffled = c;
  std::swap(shuffled.notes[0], shuffled.notes[4]);
  std::swap(shuffled.notes[1], shuffled.notes[3]);
  auto r2 = note_type_stats(shuffled);
  CHECK(r2.notes_by_type == r.notes_by_type);
  CHECK(r2.total_sentences == r.total_sentences);
}

TEST_CASE("note_type_stats empty collection") {
  auto r = note_type_stats(NoteCollection{});
  CHECK(r.total_notes == 0);
  CHECK(r.notes_by_type.empty());
  CHECK(r.to_csv() == "type,count\n");
}

TEST_CASE("notes jsonl round trip") {
  auto c = fixture_collection();
  auto path = temp_path("nb_roundtrip.jsonl");
  write_notes_jsonl(c, path);
  auto c2 = ingest_notes(path, NoteFormat::jsonl);
  REQUIRE(c2.size() == c.size());
  for (size_t i = 0; i < c.size(); ++i) {
    CHECK(c2.notes[i].id == c.notes[i].id);
    CHECK(c2.notes[i].text == c.notes[i].text);
  }
}

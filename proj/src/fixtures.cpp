#include "stare/fixtures.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <ostream>
#include <string_view>

#include "stare/error.hpp"
#include "stare/hashing.hpp"
#include "stare/rng.hpp"

namespace stare {

namespace {

constexpr std::array<std::string_view, 40> kVerbs = {
    "remind", "play",   "call",     "message", "book",   "find",     "cancel",  "schedule",
    "show",   "order",  "check",    "set",     "delete", "update",   "share",   "buy",
    "read",   "start",  "stop",     "add",     "remove", "open",     "close",   "send",
    "get",    "create", "move",     "invite",  "rate",   "pause",    "resume",  "skip",
    "search", "track",  "convert",  "translate", "record", "watch",  "download", "upload"};

constexpr std::array<std::string_view, 25> kNouns = {
    "reminder", "song",    "meeting", "alarm",  "table",    "ticket", "recipe",
    "note",     "photo",   "timer",   "ride",   "flight",   "event",  "playlist",
    "report",   "package", "podcast", "hotel",  "workout",  "invoice", "movie",
    "contact",  "message", "lesson",  "grocery"};

struct SlotKind {
  std::string_view label;
  std::vector<std::string_view> fillers;  // phrases, preposition included
};

const std::vector<SlotKind>& slot_kinds() {
  static const std::vector<SlotKind> kinds = {
      {"SL:DATE_TIME",
       {"tomorrow", "on friday", "next week", "tonight", "at 5 pm", "on sunday morning",
        "this weekend", "in two hours", "on monday", "at noon"}},
      {"SL:LOCATION",
       {"in paris", "at the office", "near the park", "in london", "at home", "downtown",
        "at the station", "in the kitchen"}},
      {"SL:PERSON",
       {"with anna", "for my mom", "with the team", "for john", "with my sister",
        "for the kids", "with david"}},
      {"SL:TOPIC",
       {"about the budget", "about school", "about the picnic", "about the trip",
        "about dinner plans", "about the game"}},
      {"SL:AMOUNT",
       {"for 3 people", "for 20 minutes", "for two hours", "for 10 dollars", "for 4 nights",
        "for 2 tickets"}},
      {"SL:ATTRIBUTE",
       {"the cheap one", "the new album", "some jazz", "the blue one", "the fastest route",
        "the latest version"}},
  };
  return kinds;
}

struct Lexeme {
  std::string_view pos, dep, pt;
};

// Token annotations for the probe corpora.
Lexeme annotate(std::string_view word, bool trigger_verb, bool trigger_noun) {
  static const std::map<std::string_view, Lexeme> table = {
      {"on", {"ADP", "CASE", "PP"}},      {"in", {"ADP", "CASE", "PP"}},
      {"at", {"ADP", "CASE", "PP"}},      {"with", {"ADP", "CASE", "PP"}},
      {"for", {"ADP", "CASE", "PP"}},     {"about", {"ADP", "CASE", "PP"}},
      {"near", {"ADP", "CASE", "PP"}},    {"the", {"DET", "DET", "NP"}},
      {"my", {"PRON", "NMOD", "NP"}},     {"some", {"DET", "DET", "NP"}},
      {"this", {"DET", "DET", "NP"}},     {"next", {"ADJ", "MOD", "ADJP"}},
      {"two", {"NUM", "MOD", "QP"}},      {"please", {"INTJ", "DEP", "INTJ"}},
      {"me", {"PRON", "OBJ", "NP"}},      {"i", {"PRON", "NSUBJ", "NP"}},
      {"you", {"PRON", "NSUBJ", "NP"}},   {"can", {"AUX", "AUX", "VP"}},
      {"could", {"AUX", "AUX", "VP"}},    {"want", {"VERB", "COMP", "VP"}},
      {"need", {"VERB", "COMP", "VP"}},   {"to", {"PART", "MARK", "VP"}},
      {"hey", {"INTJ", "VOCATIVE", "INTJ"}}, {"go", {"VERB", "COMP", "VP"}},
      {"ahead", {"ADV", "ADVMOD", "ADVP"}}, {"and", {"CCONJ", "CONJ", "UCP"}},      {"cheap", {"ADJ", "MOD", "ADJP"}},
      {"new", {"ADJ", "MOD", "ADJP"}},    {"blue", {"ADJ", "MOD", "ADJP"}},
      {"fastest", {"ADJ", "MOD", "ADJP"}}, {"latest", {"ADJ", "MOD", "ADJP"}},
      {"anna", {"PROPN", "NMOD", "NP"}},  {"john", {"PROPN", "NMOD", "NP"}},
      {"david", {"PROPN", "NMOD", "NP"}}, {"paris", {"PROPN", "OBL", "NP"}},
      {"london", {"PROPN", "OBL", "NP"}}, {"friday", {"PROPN", "OBL", "NP"}},
      {"sunday", {"PROPN", "OBL", "NP"}}, {"monday", {"PROPN", "OBL", "NP"}},
      {"tomorrow", {"NOUN", "OBL", "NP"}}, {"tonight", {"NOUN", "OBL", "NP"}},
      {"downtown", {"ADV", "ADVMOD", "ADVP"}}, {"?", {"PUNCT", "PUNCT", "O"}},
      {".", {"PUNCT", "PUNCT", "O"}},
  };
  if (trigger_verb) return {"VERB", "ROOT", "VP"};
  if (trigger_noun) return {"NOUN", "OBJ", "NP"};
  if (const auto it = table.find(word); it != table.end()) return it->second;
  if (!word.empty() && std::isdigit(static_cast<unsigned char>(word.front()))) {
    return {"NUM", "MOD", "QP"};
  }
  return {"NOUN", "NMOD", "NP"};
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

struct Template {
  std::string verb, noun, intent;
  std::vector<std::size_t> slots;  // indices into slot_kinds(); first is mandatory
  // When set, the last slot wraps a nested intent with its own slot.
  bool nested = false;
  std::string inner_verb, inner_noun, inner_intent;
  std::size_t inner_slot = 0;
};

Template make_template(std::size_t c, std::uint64_t seed) {
  Rng rng(hash_combine(seed, 0x7e3a11ull + c));
  Template t;
  const std::size_t v = c % kVerbs.size();
  const std::size_t n = (v + c / kVerbs.size()) % kNouns.size();
  t.verb = kVerbs[v];
  t.noun = kNouns[n];
  t.intent = "IN:" + upper(t.verb) + "_" + upper(t.noun);
  const std::size_t kinds = slot_kinds().size();
  const std::size_t count = 1 + rng.below(3);
  while (t.slots.size() < count) {
    const std::size_t s = rng.below(kinds);
    if (std::find(t.slots.begin(), t.slots.end(), s) == t.slots.end()) t.slots.push_back(s);
  }
  if (c % 4 == 3) {
    t.nested = true;
    const std::size_t iv = (v + 17) % kVerbs.size();
    const std::size_t in = (n + 11) % kNouns.size();
    t.inner_verb = kVerbs[iv];
    t.inner_noun = kNouns[in];
    t.inner_intent = "IN:" + upper(t.inner_verb) + "_" + upper(t.inner_noun);
    t.inner_slot = rng.below(kinds);
  }
  return t;
}

struct Sample {
  Record record;
  std::vector<std::string> tokens;
  std::vector<Lexeme> labels;
};

void add_words(Sample& s, std::string_view phrase, bool verb = false, bool noun = false) {
  std::size_t i = 0;
  while (i < phrase.size()) {
    const auto j = phrase.find(' ', i);
    const auto w = phrase.substr(i, j == std::string_view::npos ? phrase.size() - i : j - i);
    if (!w.empty()) {
      s.tokens.emplace_back(w);
      s.labels.push_back(annotate(w, verb, noun));
    }
    if (j == std::string_view::npos) break;
    i = j + 1;
  }
}

Sample sample_from(const Template& t, Rng& rng, std::string id) {
  Sample s;
  std::string parse = "[" + t.intent + " ";
  static constexpr std::array<std::string_view, 8> kPreambles = {
      "", "please", "can you", "i want to", "could you please", "hey", "i need to", "go ahead and"};
  add_words(s, kPreambles[rng.below(kPreambles.size())]);
  add_words(s, t.verb, true, false);
  add_words(s, "the", false, false);
  add_words(s, t.noun, false, true);

  for (std::size_t i = 0; i < t.slots.size(); ++i) {
    const bool last = i + 1 == t.slots.size();
    if (i > 0 && !(last && t.nested) && rng.below(10) < 3) continue;  // optional slot
    const auto& kind = slot_kinds()[t.slots[i]];
    if (last && t.nested) {
      const auto& inner = slot_kinds()[t.inner_slot];
      const auto filler = inner.fillers[rng.below(inner.fillers.size())];
      add_words(s, "to", false, false);
      add_words(s, t.inner_verb, true, false);
      add_words(s, t.inner_noun, false, true);
      add_words(s, filler);
      parse += "[" + std::string(kind.label) + " [" + t.inner_intent + " [" +
               std::string(inner.label) + " " + std::string(filler) + " ] ] ] ";
      continue;
    }
    const auto filler = kind.fillers[rng.below(kind.fillers.size())];
    add_words(s, filler);
    parse += "[" + std::string(kind.label) + " " + std::string(filler) + " ] ";
  }
  parse += "]";
  if (rng.below(3) == 0) add_words(s, rng.below(2) == 0 ? "?" : ".");

  std::string utterance;
  for (const auto& tok : s.tokens) {
    if (!utterance.empty() && tok != "?" && tok != ".") utterance += ' ';
    utterance += tok;
  }
  s.record = {std::move(id), std::move(utterance), std::move(parse)};
  return s;
}

}  // namespace

Fixture generate_fixture(const FixtureConfig& config) {
  if (config.clusters == 0 || config.train_per_cluster == 0) {
    throw Error(ErrorCode::InvalidArgument, "fixture needs at least one cluster and record");
  }
  Fixture f;
  std::vector<Template> templates;
  for (std::size_t c = 0; c < config.clusters; ++c) templates.push_back(make_template(c, config.seed));

  Rng rng(hash_combine(config.seed, 0x5eedull));
  for (std::size_t c = 0; c < config.clusters; ++c) {
    for (std::size_t i = 0; i < config.train_per_cluster; ++i) {
      f.train.push_back(sample_from(templates[c], rng,
                                    "train-c" + std::to_string(c) + "-" + std::to_string(i))
                            .record);
      f.train_cluster.push_back(c);
    }
    for (std::size_t i = 0; i < config.dev_per_cluster; ++i) {
      f.dev.push_back(
          sample_from(templates[c], rng, "dev-c" + std::to_string(c) + "-" + std::to_string(i))
              .record);
      f.dev_cluster.push_back(c);
    }
  }

  const std::array<Property, 3> properties = {Property::POS, Property::DEPS, Property::PT};
  for (Property p : properties) {
    auto& corpus = f.probes[p];
    corpus.property = p;
    corpus.label_set = default_label_set(p);
  }
  Rng probe_rng(hash_combine(config.seed, 0x9b0beull));
  for (std::size_t i = 0; i < config.probe_sentences; ++i) {
    const auto& t = templates[probe_rng.below(templates.size())];
    const Sample s = sample_from(t, probe_rng, "probe-" + std::to_string(i));
    for (Property p : properties) {
      TokenLabelSentence sentence;
      sentence.tokens = s.tokens;
      for (const auto& lex : s.labels) {
        sentence.labels.emplace_back(p == Property::POS    ? lex.pos
                                     : p == Property::DEPS ? lex.dep
                                                           : lex.pt);
      }
      f.probes[p].sentences.push_back(std::move(sentence));
    }
  }
  return f;
}

std::vector<Record> generate_cluster_corpus(std::size_t clusters, std::size_t per_cluster,
                                            std::uint64_t seed) {
  std::vector<Record> out;
  out.reserve(clusters * per_cluster);
  Rng rng(hash_combine(seed, 0xc0ffeeull));
  for (std::size_t c = 0; c < clusters; ++c) {
    const Template t = make_template(c, seed);
    for (std::size_t i = 0; i < per_cluster; ++i) {
      out.push_back(sample_from(t, rng, "c" + std::to_string(c) + "-" + std::to_string(i)).record);
    }
  }
  return out;
}

void write_token_labels(std::ostream& out, const TokenLabelCorpus& corpus) {
  bool first = true;
  for (const auto& s : corpus.sentences) {
    if (!first) out << '\n';
    first = false;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) out << s.tokens[i] << '\t' << s.labels[i] << '\n';
  }
}

}  // namespace stare

#include "pvpl/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "pvpl/rng.hpp"
#include "pvpl/text.hpp"

namespace pvpl {

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Categories

std::vector<std::string> CategorySet::surface_forms(std::size_t cls) const {
  std::vector<std::string> forms{names.at(cls)};
  if (cls < synonyms.size()) forms.insert(forms.end(), synonyms[cls].begin(), synonyms[cls].end());
  return forms;
}

std::size_t CategorySet::index_of(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw InputError("unknown class name '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

void CategorySet::validate() const {
  if (names.empty()) throw InputError("category set is empty");
  if (synonyms.size() != names.size()) throw InputError("synonym table does not match class list");
  std::set<std::string> seen;
  for (std::size_t c = 0; c < names.size(); ++c) {
    for (const auto& form : surface_forms(c)) {
      if (split_words(form).empty()) throw InputError("class " + std::to_string(c) + " has an empty surface form");
    }
    if (!seen.insert(names[c]).second) throw InputError("duplicate class name '" + names[c] + "'");
  }
}

CategorySet CategorySet::defaults() {
  return CategorySet{
      {"car", "dog", "plane", "cat", "bicycle", "bird", "boat", "horse"},
      {{"automobile"}, {"puppy"}, {"airplane", "aircraft"}, {"kitten"}, {"bike"}, {}, {"ship"},
       {"pony"}},
  };
}

const char* to_string(RecordSource s) {
  switch (s) {
    case RecordSource::generated: return "generated";
    case RecordSource::noised: return "noised";
    case RecordSource::external: return "external";
  }
  return "external";
}

RecordSource parse_source(const std::string& s) {
  if (s == "generated") return RecordSource::generated;
  if (s == "noised") return RecordSource::noised;
  if (s == "external") return RecordSource::external;
  throw InputError("unknown record source '" + s + "'");
}

const char* to_string(RejectReason r) {
  switch (r) {
    case RejectReason::label_mismatch: return "label-mismatch";
    case RejectReason::too_long: return "too-long";
    case RejectReason::no_content: return "no-content";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Lexicon matching

namespace {

using Phrase = std::vector<std::string>;

std::vector<std::vector<Phrase>> class_phrases(const CategorySet& cats) {
  std::vector<std::vector<Phrase>> out(cats.size());
  for (std::size_t c = 0; c < cats.size(); ++c)
    for (const auto& f : cats.surface_forms(c)) out[c].push_back(split_words(f));
  return out;
}

bool matches_at(const std::vector<std::string>& toks, std::size_t i, const Phrase& ph) {
  if (ph.empty() || i + ph.size() > toks.size()) return false;
  for (std::size_t k = 0; k < ph.size(); ++k)
    if (toks[i + k] != ph[k]) return false;
  return true;
}

// Labels found in `toks`, and a mask of token positions covered by a match.
std::vector<std::size_t> match_labels(const std::vector<std::vector<Phrase>>& phrases,
                                      const std::vector<std::string>& toks,
                                      std::vector<bool>* covered = nullptr) {
  if (covered) covered->assign(toks.size(), false);
  std::vector<std::size_t> found;
  for (std::size_t c = 0; c < phrases.size(); ++c) {
    bool hit = false;
    for (const auto& ph : phrases[c]) {
      for (std::size_t i = 0; i < toks.size(); ++i) {
        if (!matches_at(toks, i, ph)) continue;
        hit = true;
        if (covered)
          for (std::size_t k = 0; k < ph.size(); ++k) (*covered)[i + k] = true;
      }
    }
    if (hit) found.push_back(c);
  }
  return found;
}

const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> kStop = {
      "a",    "an",    "the",    "of",     "and",   "in",      "on",      "at",
      "by",   "to",    "with",   "is",     "are",   "was",     "there",   "one",
      "from", "near",  "next",   "under",  "during", "beside", "behind",  "front",
      "we",   "it",    "this",   "that",   "its",   "together", "outside", "someone"};
  return kStop;
}

// ---------------------------------------------------------------------------
// Caption grammar

const std::vector<std::string> kFrames = {
    "a photo of {L}",
    "{L} in {place}",
    "{L} {prep} {place}",
    "there is {L} {prep} {place}",
    "{L} on a {weather} day",
    "a picture showing {L}",
    "{L} seen from {view}",
    "an image of {L} at {time}",
    "{L} next to {place}",
    "we saw {L} {prep} {place}",
    "a {style} photo of {L}",
    "{L} waiting {prep} {place}",
    "a close view of {L}",
    "{L} together in {place}",
    "a quiet scene with {L}",
    "{L} under {sky}",
    "someone photographed {L} in {place}",
    "{L} by {place} at {time}",
    "a snapshot of {L} outside",
    "{L} during {event}",
};

const std::vector<std::pair<std::string, std::vector<std::string>>> kSlots = {
    {"place",
     {"the old house", "a busy street", "the park", "the river", "a green field", "the station",
      "a small town", "the beach", "the garden", "a narrow road"}},
    {"prep", {"near", "beside", "behind", "in front of"}},
    {"weather", {"sunny", "rainy", "cloudy", "foggy"}},
    {"view", {"a window", "the hill", "a bridge", "the roof"}},
    {"time", {"dawn", "noon", "dusk", "night"}},
    {"style", {"blurry", "bright", "dark", "candid"}},
    {"sky", {"a blue sky", "a gray sky", "the clouds"}},
    {"event", {"a festival", "the weekend", "a storm", "the holidays"}},
};

const std::vector<std::string> kAdjectives = {"red",   "small", "large", "old",   "white",
                                              "black", "brown", "young", "shiny", "dusty"};

bool starts_with_vowel(const std::string& w) {
  return !w.empty() && std::string("aeiou").find(static_cast<char>(std::tolower(
                           static_cast<unsigned char>(w[0])))) != std::string::npos;
}

std::string noun_phrase(const std::string& noun, Rng& rng, bool allow_adj) {
  std::string head = noun;
  if (allow_adj && rng.uniform() < 0.35) head = kAdjectives[rng.index(kAdjectives.size())] + " " + noun;
  const double r = rng.uniform();
  if (r < 0.5) return (starts_with_vowel(head) ? "an " : "a ") + head;
  if (r < 0.85) return "the " + head;
  return "one " + head;
}

std::string list_phrase(const std::vector<std::string>& nps) {
  if (nps.size() == 1) return nps[0];
  std::string s;
  for (std::size_t i = 0; i + 1 < nps.size(); ++i) {
    if (i) s += ", ";
    s += nps[i];
  }
  return s + " and " + nps.back();
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
  return s;
}

std::string finish_sentence(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s + ".";
}

std::string instantiate(const CategorySet& cats, const std::vector<std::size_t>& labels,
                        std::size_t frame, bool allow_adj, Rng& rng) {
  std::vector<std::size_t> order = labels;
  rng.shuffle(order);
  std::vector<std::string> nps;
  for (std::size_t c : order) {
    const auto forms = cats.surface_forms(c);
    nps.push_back(noun_phrase(forms[rng.index(forms.size())], rng, allow_adj));
  }
  std::string s = replace_all(kFrames[frame], "{L}", list_phrase(nps));
  for (const auto& [slot, fillers] : kSlots) {
    const std::string key = "{" + slot + "}";
    if (s.find(key) != std::string::npos) s = replace_all(s, key, fillers[rng.index(fillers.size())]);
  }
  return finish_sentence(s);
}

// A caption for `labels` that round-trips exactly and stays under max_words.
std::string caption_for(const CategorySet& cats, const std::vector<std::vector<Phrase>>& phrases,
                        const std::vector<std::size_t>& labels, std::size_t max_words, Rng& rng) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    std::string s = instantiate(cats, labels, rng.index(kFrames.size()), attempt < 32, rng);
    const auto toks = split_words(s);
    if (toks.size() < max_words && match_labels(phrases, toks) == labels) return s;
  }
  // Bare nouns in every frame before giving up.
  for (std::size_t frame = 0; frame < kFrames.size(); ++frame) {
    std::string s = instantiate(cats, labels, frame, false, rng);
    const auto toks = split_words(s);
    if (toks.size() < max_words && match_labels(phrases, toks) == labels) return s;
  }
  throw ParameterError("no caption for " + std::to_string(labels.size()) +
                       " classes fits under max_words = " + std::to_string(max_words));
}

std::vector<std::size_t> sample_labels(std::size_t n_classes, const std::vector<std::size_t>& counts,
                                       Rng& rng) {
  const double u = rng.uniform();
  std::size_t k = u < 0.4 ? 1 : (u < 0.8 ? 2 : 3);
  k = std::min(k, n_classes);
  std::vector<std::size_t> pool(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) pool[c] = c;
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < k; ++j) {
    double total = 0;
    for (std::size_t c : pool) total += 1.0 / (1.0 + static_cast<double>(counts[c]));
    double r = rng.uniform() * total;
    std::size_t pick = pool.size() - 1;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      r -= 1.0 / (1.0 + static_cast<double>(counts[pool[i]]));
      if (r < 0) {
        pick = i;
        break;
      }
    }
    out.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string s;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) s += ' ';
    s += words[i];
  }
  return finish_sentence(s);
}

}  // namespace

std::vector<CorpusRecord> generate_corpus(const CategorySet& categories, std::size_t count,
                                          std::uint64_t seed, std::size_t max_words) {
  categories.validate();
  if (count == 0) throw ParameterError("corpus count must be positive");
  const auto phrases = class_phrases(categories);
  Rng rng(seed);
  std::vector<std::size_t> counts(categories.size(), 0);
  std::vector<CorpusRecord> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto labels = sample_labels(categories.size(), counts, rng);
    for (std::size_t c : labels) ++counts[c];
    out.push_back({caption_for(categories, phrases, labels, max_words, rng), std::move(labels),
                   RecordSource::generated});
  }
  return out;
}

std::vector<std::size_t> extract_labels(const CategorySet& categories,
                                        const std::string& sentence) {
  return match_labels(class_phrases(categories), split_words(sentence));
}

CheckResult reasonableness_check(const CategorySet& categories,
                                 const std::vector<CorpusRecord>& records, std::size_t max_words) {
  const auto phrases = class_phrases(categories);
  CheckResult res;
  for (const auto& r : records) {
    const auto toks = split_words(r.sentence);
    std::vector<bool> covered;
    const auto found = match_labels(phrases, toks, &covered);
    if (found != r.labels) {
      res.rejected.push_back({r, RejectReason::label_mismatch});
      continue;
    }
    if (toks.size() >= max_words) {
      res.rejected.push_back({r, RejectReason::too_long});
      continue;
    }
    bool content = false;
    for (std::size_t i = 0; i < toks.size() && !content; ++i)
      content = !covered[i] && !stopwords().count(toks[i]);
    if (!content) {
      res.rejected.push_back({r, RejectReason::no_content});
      continue;
    }
    res.kept.push_back(r);
  }
  return res;
}

std::vector<CorpusRecord> add_text_noise(const CategorySet& categories,
                                         const std::vector<CorpusRecord>& records,
                                         std::uint64_t seed, double noise_rate,
                                         std::size_t max_words) {
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) {
    throw ParameterError("noise rate must lie in [0, 1]");
  }
  std::vector<CorpusRecord> out = records;
  const auto n_noised =
      static_cast<std::size_t>(std::llround(noise_rate * static_cast<double>(records.size())));
  if (n_noised == 0) return out;
  Rng rng(seed);
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  order.resize(n_noised);
  std::sort(order.begin(), order.end());

  const auto phrases = class_phrases(categories);
  for (std::size_t idx : order) {
    CorpusRecord& rec = out[idx];
    const auto toks = split_words(rec.sentence);
    std::vector<bool> covered;
    const auto before = match_labels(phrases, toks, &covered);
    std::vector<std::string> result = toks;
    for (int attempt = 0; attempt < 8; ++attempt) {
      std::vector<std::size_t> free_pos, swap_pos;
      for (std::size_t i = 0; i < toks.size(); ++i) {
        if (covered[i]) continue;
        free_pos.push_back(i);
        if (i + 1 < toks.size() && !covered[i + 1]) swap_pos.push_back(i);
      }
      std::vector<int> ops;
      if (!free_pos.empty() && toks.size() > 1) ops.push_back(0);
      if (!swap_pos.empty()) ops.push_back(1);
      if (!free_pos.empty() && toks.size() + 1 < max_words) ops.push_back(2);
      if (ops.empty()) break;
      std::vector<std::string> cand = toks;
      switch (ops[rng.index(ops.size())]) {
        case 0:
          cand.erase(cand.begin() + static_cast<std::ptrdiff_t>(free_pos[rng.index(free_pos.size())]));
          break;
        case 1: {
          const std::size_t i = swap_pos[rng.index(swap_pos.size())];
          std::swap(cand[i], cand[i + 1]);
          break;
        }
        default: {
          const std::size_t i = free_pos[rng.index(free_pos.size())];
          cand.insert(cand.begin() + static_cast<std::ptrdiff_t>(i), cand[i]);
          break;
        }
      }
      if (match_labels(phrases, cand) == before) {
        result = std::move(cand);
        break;
      }
    }
    rec.sentence = join_words(result);
    rec.source = RecordSource::noised;
  }
  return out;
}

std::vector<CorpusRecord> augment_corpus(const CategorySet& categories,
                                         const std::vector<CorpusRecord>& records,
                                         std::uint64_t seed, std::size_t factor,
                                         std::size_t max_words) {
  if (factor < 1) throw ParameterError("augmentation factor must be at least 1");
  if (factor == 1) return records;
  const auto phrases = class_phrases(categories);
  Rng rng(seed);
  std::unordered_set<std::string> seen;
  std::vector<CorpusRecord> out;
  out.reserve(records.size() * factor);
  for (const auto& r : records) {
    if (seen.insert(r.sentence).second) out.push_back(r);
    if (r.labels.empty()) continue;
    for (std::size_t f = 1; f < factor; ++f) {
      CorpusRecord v{caption_for(categories, phrases, r.labels, max_words, rng), r.labels,
                     RecordSource::generated};
      if (seen.insert(v.sentence).second) out.push_back(std::move(v));
    }
  }
  return out;
}

CorpusStats corpus_stats(const std::vector<CorpusRecord>& records,
                         const CategorySet& categories) {
  CorpusStats st;
  st.class_counts.assign(categories.size(), 0);
  st.records = records.size();
  for (const auto& r : records) {
    ++st.labels_per_record[r.labels.size()];
    for (std::size_t c : r.labels) {
      if (c >= categories.size()) throw InputError("record label out of range");
      ++st.class_counts[c];
    }
  }
  if (records.empty() || st.class_counts.empty()) return st;
  const auto [mn, mx] = std::minmax_element(st.class_counts.begin(), st.class_counts.end());
  st.imbalance_ratio = *mn == 0 ? std::numeric_limits<double>::infinity()
                                : static_cast<double>(*mx) / static_cast<double>(*mn);
  return st;
}

std::vector<std::string> grammar_words() {
  std::set<std::string> words;
  auto add = [&](const std::string& s) {
    for (auto& w : split_words(s)) words.insert(w);
  };
  for (const auto& f : kFrames) {
    std::string bare = f;
    for (auto open = bare.find('{'); open != std::string::npos; open = bare.find('{'))
      bare.erase(open, bare.find('}', open) - open + 1);
    add(bare);
  }
  for (const auto& [slot, fillers] : kSlots) {
    for (const auto& f : fillers) add(f);
  }
  for (const auto& a : kAdjectives) add(a);
  for (const char* w : {"a", "an", "the", "one", "and"}) add(w);
  return {words.begin(), words.end()};
}

VocabSpec vocab_spec(const CategorySet& categories) {
  categories.validate();
  VocabSpec v;
  for (std::size_t c = 0; c < categories.size(); ++c) v.class_tokens.push_back(categories.surface_forms(c));
  v.words = grammar_words();
  return v;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

}  // namespace

CategorySet read_categories(const std::string& path) {
  auto in = open_in(path);
  CategorySet cats;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& c : j.at("classes")) {
      cats.names.push_back(c.at("name").get<std::string>());
      cats.synonyms.push_back(c.value("synonyms", std::vector<std::string>{}));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
  cats.validate();
  return cats;
}

void write_categories(const std::string& path, const CategorySet& categories) {
  ojson j;
  j["classes"] = ojson::array();
  for (std::size_t c = 0; c < categories.size(); ++c) {
    j["classes"].push_back({{"name", categories.names[c]}, {"synonyms", categories.synonyms[c]}});
  }
  auto out = open_out(path);
  out << j.dump(2) << '\n';
}

std::vector<CorpusRecord> read_corpus(const std::string& path, const CategorySet& categories) {
  auto in = open_in(path);
  std::vector<CorpusRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CorpusRecord r;
      r.sentence = j.at("sentence").get<std::string>();
      for (const auto& name : j.at("labels")) r.labels.push_back(categories.index_of(name.get<std::string>()));
      std::sort(r.labels.begin(), r.labels.end());
      r.labels.erase(std::unique(r.labels.begin(), r.labels.end()), r.labels.end());
      r.source = parse_source(j.value("source", std::string("external")));
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_corpus(std::ostream& out, const std::vector<CorpusRecord>& records,
                  const CategorySet& categories) {
  for (const auto& r : records) {
    ojson j;
    j["sentence"] = r.sentence;
    j["labels"] = ojson::array();
    for (std::size_t c : r.labels) j["labels"].push_back(categories.names.at(c));
    j["source"] = to_string(r.source);
    out << j.dump() << '\n';
  }
}

void write_corpus(const std::string& path, const std::vector<CorpusRecord>& records,
                  const CategorySet& categories) {
  auto out = open_out(path);
  write_corpus(out, records, categories);
  if (!out) throw IoError("failed writing " + path);
}

std::string stats_json(const CorpusStats& stats, const CategorySet& categories) {
  ojson j;
  j["records"] = stats.records;
  j["class_counts"] = ojson::object();
  for (std::size_t c = 0; c < stats.class_counts.size(); ++c)
    j["class_counts"][categories.names.at(c)] = stats.class_counts[c];
  j["labels_per_record"] = ojson::object();
  for (const auto& [k, v] : stats.labels_per_record) j["labels_per_record"][std::to_string(k)] = v;
  if (std::isinf(stats.imbalance_ratio)) {
    j["imbalance_ratio"] = nullptr;
  } else {
    j["imbalance_ratio"] = stats.imbalance_ratio;
  }
  return j.dump(2) + "\n";
}

}  // namespace pvpl

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "pvpl/encoders.hpp"

namespace pvpl {

/// Ordered class list. Index order is the class index everywhere downstream.
struct CategorySet {
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> synonyms;  // parallel to names

  std::size_t size() const { return names.size(); }
  /// Name followed by its synonyms.
  std::vector<std::string> surface_forms(std::size_t cls) const;
  /// Index of a class by name; throws InputError if unknown.
  std::size_t index_of(const std::string& name) const;
  /// Throws InputError on empty/duplicate names or mismatched synonym lists.
  void validate() const;

  /// The eight-class toy category set.
  static CategorySet defaults();
};

enum class RecordSource { generated, noised, external };

const char* to_string(RecordSource s);
RecordSource parse_source(const std::string& s);

struct CorpusRecord {
  std::string sentence;
  std::vector<std::size_t> labels;  // sorted, unique
  RecordSource source = RecordSource::generated;

  bool operator==(const CorpusRecord&) const = default;
};

struct CorpusStats {
  std::vector<std::size_t> class_counts;
  std::map<std::size_t, std::size_t> labels_per_record;  // label count -> records
  std::size_t records = 0;
  /// max/min class count; 0 for an empty corpus, infinity if a class is absent.
  double imbalance_ratio = 0.0;
};

enum class RejectReason { label_mismatch, too_long, no_content };

const char* to_string(RejectReason r);

struct Rejection {
  CorpusRecord record;
  RejectReason reason;
};

struct CheckResult {
  std::vector<CorpusRecord> kept;
  std::vector<Rejection> rejected;
};

inline constexpr std::size_t kDefaultMaxWords = 15;

/// Balanced synthetic captions. Each record names 1-3 classes, drawn with
/// weights inversely proportional to running class counts, and has fewer than
/// max_words words.
std::vector<CorpusRecord> generate_corpus(const CategorySet& categories, std::size_t count,
                                          std::uint64_t seed,
                                          std::size_t max_words = kDefaultMaxWords);

/// Classes whose name or synonym occurs as a whole token or token phrase.
std::vector<std::size_t> extract_labels(const CategorySet& categories,
                                        const std::string& sentence);

/// Partition records into kept and rejected (label mismatch, too long, or no
/// content word outside the label phrases).
CheckResult reasonableness_check(const CategorySet& categories,
                                 const std::vector<CorpusRecord>& records,
                                 std::size_t max_words = kDefaultMaxWords);

/// Perturb exactly round(noise_rate * size) records, chosen by seed: drop,
/// swap or duplicate words outside label phrases. Labels never change.
std::vector<CorpusRecord> add_text_noise(const CategorySet& categories,
                                         const std::vector<CorpusRecord>& records,
                                         std::uint64_t seed, double noise_rate,
                                         std::size_t max_words = kDefaultMaxWords);

/// Add factor-1 paraphrases per record with the same labels, then drop exact
/// duplicate sentences (first occurrence wins).
std::vector<CorpusRecord> augment_corpus(const CategorySet& categories,
                                         const std::vector<CorpusRecord>& records,
                                         std::uint64_t seed, std::size_t factor,
                                         std::size_t max_words = kDefaultMaxWords);

CorpusStats corpus_stats(const std::vector<CorpusRecord>& records,
                         const CategorySet& categories);

/// Every non-class word the caption grammar can emit.
std::vector<std::string> grammar_words();

/// Vocabulary for the encoder: class surface forms plus grammar words.
VocabSpec vocab_spec(const CategorySet& categories);

// File formats.
CategorySet read_categories(const std::string& path);
void write_categories(const std::string& path, const CategorySet& categories);
std::vector<CorpusRecord> read_corpus(const std::string& path, const CategorySet& categories);
void write_corpus(std::ostream& out, const std::vector<CorpusRecord>& records,
                  const CategorySet& categories);
void write_corpus(const std::string& path, const std::vector<CorpusRecord>& records,
                  const CategorySet& categories);
std::string stats_json(const CorpusStats& stats, const CategorySet& categories);

}  // namespace pvpl

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pvpl/corpus.hpp"
#include "pvpl/text.hpp"

namespace pvpl {
namespace {

namespace fs = std::filesystem;

const CategorySet& cats() {
  static const CategorySet c = CategorySet::defaults();
  return c;
}

std::string corpus_text(const std::vector<CorpusRecord>& r, const CategorySet& c = cats()) {
  std::ostringstream out;
  write_corpus(out, r, c);
  return out.str();
}

bool subset(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

fs::path temp_dir() {
  auto d = fs::temp_directory_path() / ("pvpl_corpus_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()));
  fs::create_directories(d);
  return d;
}

TEST(Categories, Validation) {
  EXPECT_NO_THROW(cats().validate());
  EXPECT_THROW((CategorySet{{"car", "car"}, {{}, {}}}.validate()), InputError);
  EXPECT_THROW((CategorySet{{"car", ""}, {{}, {}}}.validate()), InputError);
  EXPECT_THROW((CategorySet{{"car"}, {}}.validate()), InputError);
  EXPECT_EQ(cats().index_of("dog"), 1u);
  EXPECT_THROW(cats().index_of("zebra"), InputError);
}

TEST(Generate, TwoClassBalance) {
  const CategorySet two{{"car", "dog"}, {{}, {}}};
  const auto stats = corpus_stats(generate_corpus(two, 1000, 4), two);
  EXPECT_EQ(stats.records, 1000u);
  EXPECT_LE(stats.imbalance_ratio, 1.3);
}

TEST(Generate, DefaultBalanceLengthAndRoundTrip) {
  const auto recs = generate_corpus(cats(), 2000, 7);
  const auto stats = corpus_stats(recs, cats());
  EXPECT_LE(stats.imbalance_ratio, 1.3);
  for (const auto& r : recs) {
    EXPECT_LT(split_words(r.sentence).size(), 15u) << r.sentence;
    EXPECT_GE(r.labels.size(), 1u);
    EXPECT_LE(r.labels.size(), 3u);
    EXPECT_TRUE(subset(r.labels, extract_labels(cats(), r.sentence))) << r.sentence;
    EXPECT_EQ(r.source, RecordSource::generated);
  }
}

TEST(Generate, SameSeedByteIdentical) {
  EXPECT_EQ(corpus_text(generate_corpus(cats(), 300, 9)), corpus_text(generate_corpus(cats(), 300, 9)));
  EXPECT_NE(corpus_text(generate_corpus(cats(), 300, 9)), corpus_text(generate_corpus(cats(), 300, 10)));
}

TEST(Generate, Errors) {
  EXPECT_THROW(generate_corpus(CategorySet{}, 10, 1), InputError);
  EXPECT_THROW(generate_corpus(cats(), 0, 1), ParameterError);
}

TEST(Generate, RespectsSmallerWordLimit) {
  for (const auto& r : generate_corpus(cats(), 500, 2, 12)) EXPECT_LT(split_words(r.sentence).size(), 12u);
  // Three labels cannot fit in five words; refuse rather than overrun.
  EXPECT_THROW(generate_corpus(cats(), 200, 2, 5), ParameterError);
}

TEST(ExtractLabels, DirectMatch) {
  const CategorySet three{{"car", "dog", "plane"}, {{}, {}, {}}};
  EXPECT_EQ(extract_labels(three, "a red car near a dog"), (std::vector<std::size_t>{0, 1}));
}

TEST(ExtractLabels, TokenBoundary) {
  EXPECT_TRUE(extract_labels(CategorySet{{"car"}, {{}}}, "a carpet on the floor").empty());
}

TEST(ExtractLabels, Synonym) {
  EXPECT_EQ(extract_labels(CategorySet{{"car"}, {{"automobile"}}}, "an automobile"),
            (std::vector<std::size_t>{0}));
}

TEST(ExtractLabels, MultiTokenPhrase) {
  const CategorySet c{{"traffic light", "car"}, {{}, {}}};
  EXPECT_EQ(extract_labels(c, "A Traffic-Light beside a car"), (std::vector<std::size_t>{0, 1}));
  EXPECT_TRUE(extract_labels(c, "light traffic today").empty());
}

TEST(Reasonableness, LabelMismatchRejected) {
  CorpusRecord r{"a photo of a dog in the park", {0}, RecordSource::external};
  const auto res = reasonableness_check(cats(), {r});
  ASSERT_EQ(res.rejected.size(), 1u);
  EXPECT_EQ(res.rejected[0].reason, RejectReason::label_mismatch);
}

TEST(Reasonableness, TooLongRejected) {
  std::string s = "a car";
  while (split_words(s).size() < 20) s += " parked";
  const auto res = reasonableness_check(cats(), {CorpusRecord{s, {0}}}, 15);
  ASSERT_EQ(res.rejected.size(), 1u);
  EXPECT_EQ(res.rejected[0].reason, RejectReason::too_long);
}

TEST(Reasonableness, NoContentRejected) {
  const auto res = reasonableness_check(cats(), {CorpusRecord{"car dog", {0, 1}}});
  ASSERT_EQ(res.rejected.size(), 1u);
  EXPECT_EQ(res.rejected[0].reason, RejectReason::no_content);
}

TEST(Reasonableness, CleanGeneratorOutputKept) {
  const auto recs = generate_corpus(cats(), 2000, 3);
  const auto res = reasonableness_check(cats(), recs);
  EXPECT_GE(double(res.kept.size()) / double(recs.size()), 0.99);
  EXPECT_EQ(res.kept.size() + res.rejected.size(), recs.size());
  for (const auto& r : res.kept) EXPECT_EQ(extract_labels(cats(), r.sentence), r.labels);
}

TEST(Noise, ZeroRateUnchanged) {
  const auto recs = generate_corpus(cats(), 100, 3);
  EXPECT_EQ(add_text_noise(cats(), recs, 5, 0.0), recs);
}

TEST(Noise, ExactCountAndLabelsProtected) {
  const auto recs = generate_corpus(cats(), 1000, 3);
  const auto noised = add_text_noise(cats(), recs, 5, 0.3);
  ASSERT_EQ(noised.size(), recs.size());
  std::size_t marked = 0;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(noised[i].labels, recs[i].labels);
    EXPECT_TRUE(subset(noised[i].labels, extract_labels(cats(), noised[i].sentence))) << noised[i].sentence;
    if (noised[i].source == RecordSource::noised) {
      ++marked;
      EXPECT_NE(noised[i].sentence, recs[i].sentence);
    } else {
      EXPECT_EQ(noised[i], recs[i]);
    }
  }
  EXPECT_EQ(marked, 300u);
  EXPECT_EQ(add_text_noise(cats(), recs, 5, 0.3), noised);
}

TEST(Noise, RateOutOfRange) {
  EXPECT_THROW(add_text_noise(cats(), {}, 1, 1.5), ParameterError);
  EXPECT_THROW(add_text_noise(cats(), {}, 1, -0.1), ParameterError);
}

TEST(Augment, FactorOneIdentity) {
  const auto recs = generate_corpus(cats(), 100, 3);
  EXPECT_EQ(augment_corpus(cats(), recs, 4, 1), recs);
  EXPECT_THROW(augment_corpus(cats(), recs, 4, 0), ParameterError);
}

TEST(Augment, FactorThree) {
  const auto recs = generate_corpus(cats(), 100, 3);
  const auto aug = augment_corpus(cats(), recs, 4, 3);
  EXPECT_LE(aug.size(), 300u);
  EXPECT_GT(aug.size(), 100u);
  std::vector<std::string> sentences;
  for (const auto& r : aug) {
    sentences.push_back(r.sentence);
    // Every variant names exactly its parent's label set.
    EXPECT_EQ(extract_labels(cats(), r.sentence), r.labels) << r.sentence;
  }
  std::sort(sentences.begin(), sentences.end());
  EXPECT_EQ(std::adjacent_find(sentences.begin(), sentences.end()), sentences.end());
  // Every parent survives unchanged, in order, each followed by its variants.
  std::size_t next = 0;
  for (const auto& r : aug)
    if (next < recs.size() && r == recs[next]) ++next;
  EXPECT_EQ(next, recs.size());
}

TEST(Augment, ClassCountsScaleByFactor) {
  const auto recs = generate_corpus(cats(), 1000, 3);
  const auto before = corpus_stats(recs, cats());
  const auto after = corpus_stats(augment_corpus(cats(), recs, 4, 3), cats());
  for (std::size_t c = 0; c < cats().size(); ++c) {
    const double ratio = double(after.class_counts[c]) / double(before.class_counts[c]);
    EXPECT_NEAR(ratio, 3.0, 0.3) << cats().names[c];
  }
}

TEST(Stats, Empty) {
  const auto s = corpus_stats({}, cats());
  EXPECT_EQ(s.records, 0u);
  EXPECT_EQ(s.imbalance_ratio, 0.0);
  EXPECT_TRUE(s.labels_per_record.empty());
  for (auto c : s.class_counts) EXPECT_EQ(c, 0u);
}

TEST(Stats, HandCount) {
  const CategorySet two{{"car", "dog"}, {{}, {}}};
  const auto s = corpus_stats({CorpusRecord{"a car", {0}}, CorpusRecord{"a car and a dog", {0, 1}}}, two);
  EXPECT_EQ(s.class_counts, (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(s.labels_per_record, (std::map<std::size_t, std::size_t>{{1, 1}, {2, 1}}));
  EXPECT_DOUBLE_EQ(s.imbalance_ratio, 2.0);
}

TEST(Stats, CountsConsistentWithRecords) {
  const auto recs = generate_corpus(cats(), 500, 8);
  const auto s = corpus_stats(recs, cats());
  std::size_t label_total = 0, hist_records = 0, hist_labels = 0;
  for (const auto& r : recs) label_total += r.labels.size();
  for (auto [k, n] : s.labels_per_record) {
    hist_records += n;
    hist_labels += k * n;
  }
  std::size_t class_total = 0;
  for (auto c : s.class_counts) class_total += c;
  EXPECT_EQ(hist_records, recs.size());
  EXPECT_EQ(hist_labels, label_total);
  EXPECT_EQ(class_total, label_total);
}

TEST(Files, CorpusRoundTrip) {
  const auto dir = temp_dir();
  auto recs = add_text_noise(cats(), generate_corpus(cats(), 50, 3), 2, 0.2);
  recs.push_back(CorpusRecord{"un caf\xc3\xa9 pr\xc3\xa8s d'une voiture car", {0}, RecordSource::external});
  const auto path = (dir / "c.jsonl").string();
  write_corpus(path, recs, cats());
  EXPECT_EQ(read_corpus(path, cats()), recs);
  fs::remove_all(dir);
}

TEST(Files, CorpusUsesClassNames) {
  const auto text = corpus_text({CorpusRecord{"a dog and a cat", {1, 3}}});
  EXPECT_NE(text.find("\"labels\":[\"dog\",\"cat\"]"), std::string::npos) << text;
  EXPECT_NE(text.find("\"source\":\"generated\""), std::string::npos) << text;
}

TEST(Files, CorpusErrorsNameFileAndLine) {
  const auto dir = temp_dir();
  const auto path = (dir / "bad.jsonl").string();
  std::ofstream(path) << "{\"sentence\":\"a dog\",\"labels\":[\"dog\"],\"source\":\"generated\"}\n"
                      << "{\"sentence\":\"a zebra\",\"labels\":[\"zebra\"],\"source\":\"generated\"}\n";
  try {
    read_corpus(path, cats());
    FAIL() << "expected InputError";
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.jsonl:2"), std::string::npos) << e.what();
  }
  std::ofstream(path) << "not json\n";
  EXPECT_THROW(read_corpus(path, cats()), InputError);
  EXPECT_THROW(read_corpus((dir / "missing.jsonl").string(), cats()), IoError);
  fs::remove_all(dir);
}

TEST(Files, CategoriesRoundTrip) {
  const auto dir = temp_dir();
  const auto path = (dir / "cats.json").string();
  write_categories(path, cats());
  const auto back = read_categories(path);
  EXPECT_EQ(back.names, cats().names);
  EXPECT_EQ(back.synonyms, cats().synonyms);
  std::ofstream(path) << R"({"classes": [{"name": "car"}, {"name": "car"}]})";
  EXPECT_THROW(read_categories(path), InputError);
  fs::remove_all(dir);
}

TEST(Text, SplitWords) {
  EXPECT_EQ(split_words("A car, and a DOG."), (std::vector<std::string>{"a", "car", "and", "a", "dog"}));
  EXPECT_TRUE(split_words("").empty());
  EXPECT_EQ(split_words("caf\xc3\xa9!"), (std::vector<std::string>{"caf\xc3\xa9"}));
}

}  // namespace
}  // namespace pvpl

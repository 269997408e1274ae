#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pvpl/evalkit.hpp"
#include "pvpl/gradcheck.hpp"
#include "pvpl/pipeline.hpp"

namespace pvpl {
namespace {

using T64 = BasicTensor<double>;

struct DefaultTask {
  PipelineConfig config;
  FrozenDualEncoder enc;
  std::vector<CorpusRecord> records;
  std::vector<EncodedText> encoded;
  PvpBank initial;
  PvpBank bank;
  TrainHistory history;
  std::string enc_sum_before;
  std::vector<LabeledImage> eval_set;

  DefaultTask() : enc(build_encoder(config)) {
    // 8 classes, 2000 generated sentences, no augmentation or noise.
    StageToggles plain{false, false, false, true, false, false, false};
    records = build_corpus(config, plain).records;
    encoded = encode_records(enc, records);
    const auto& d = enc.dims();
    initial = init_bank(enc.num_classes(), d.image, d.image, stage_seed(config, SeedStream::pvp_init), d);
    bank = initial;
    for (auto& p : bank.prompts) p = p.detach();
    enc_sum_before = enc.checksum();
    history = train_pvp(enc, bank, encoded, pvp_config(config));
    eval_set = eval_images(config, enc);
  }
};

const DefaultTask& task() {
  static const DefaultTask t;
  return t;
}

double zero_shot_map(const DefaultTask& t, const PvpBank& bank) {
  std::vector<std::vector<double>> scores;
  for (const auto& li : t.eval_set) {
    auto s = zero_shot_scores_pvp(t.enc, bank, li.image, t.config.pvp.gamma);
    scores.emplace_back(s.begin(), s.end());
  }
  return mean_average_precision(scores, label_matrix(t.eval_set, t.enc.num_classes())).map;
}

TEST(RankingLoss, AllEqualOnePair) {
  auto l = ranking_loss(T64::vector({0.3, 0.3}), {0}, {1}, 1.0);
  ASSERT_TRUE(l);
  EXPECT_DOUBLE_EQ(l->item(), 1.0);
}

TEST(RankingLoss, SatisfiedHinge) {
  auto l = ranking_loss(T64::vector({0.9, 0.1}), {0}, {1}, 0.2);
  EXPECT_DOUBLE_EQ(l->item(), 0.0);
}

TEST(RankingLoss, HandEnumeratedPairs) {
  // pos {0.5, 0.2}, neg {0.4, 0.0}, m = 0.3:
  // (0.5,0.4) 0.2, (0.5,0.0) 0, (0.2,0.4) 0.5, (0.2,0.0) 0.1.
  auto l = ranking_loss(T64::vector({0.5, 0.2, 0.4, 0.0}), {0, 1}, {2, 3}, 0.3);
  EXPECT_NEAR(l->item(), 0.8, 1e-12);
}

TEST(RankingLoss, EmptyPositivesSkips) {
  EXPECT_FALSE(ranking_loss(T64::vector({1, 2}), {}, {0, 1}, 1.0).has_value());
}

TEST(RankingLoss, OverlapRejected) {
  EXPECT_THROW(ranking_loss(T64::vector({1, 2}), {0}, {0, 1}, 1.0), ParameterError);
}

TEST(RankingLoss, NonNegativeAndZeroIffSeparated) {
  Rng rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t N = 2 + rng.index(7);
    std::vector<double> s(N);
    for (auto& v : s) v = rng.normal(0, 2);
    std::vector<std::size_t> idx(N);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    const std::size_t k = 1 + rng.index(N - 1);
    std::vector<std::size_t> pos(idx.begin(), idx.begin() + k), neg(idx.begin() + k, idx.end());
    const double m = rng.uniform(0.05, 2.0);
    const double loss = ranking_loss(T64({N}, s), pos, neg, m)->item();
    double min_pos = 1e300, max_neg = -1e300, oracle = 0;
    for (auto i : pos) min_pos = std::min(min_pos, s[i]);
    for (auto j : neg) max_neg = std::max(max_neg, s[j]);
    for (auto i : pos)
      for (auto j : neg) oracle += std::max(0.0, m - s[i] + s[j]);
    EXPECT_GE(loss, 0.0);
    EXPECT_NEAR(loss, oracle, 1e-12);
    EXPECT_EQ(loss == 0.0, min_pos - max_neg >= m);
  }
}

TEST(RankingLoss, GradientAwayFromKinks) {
  Rng rng(8);
  int checked = 0;
  while (checked < 10) {
    std::vector<double> s(6);
    for (auto& v : s) v = rng.normal(0, 1.5);
    const std::vector<std::size_t> pos{1, 4}, neg{0, 2, 3, 5};
    bool near_kink = false;
    for (auto i : pos)
      for (auto j : neg) near_kink |= std::abs(1.0 + s[j] - s[i]) < 4e-3;
    if (near_kink) continue;
    auto r = grad_check<double>([&](const T64& x) { return *ranking_loss(x, pos, neg, 1.0); }, T64({6}, s));
    EXPECT_TRUE(r.passed) << r.max_rel_err;
    ++checked;
  }
}

TEST(Bank, InitDeterministicAndSized) {
  EncoderDims d;
  auto a = init_bank(8, 32, 32, 5, d), b = init_bank(8, 32, 32, 5, d);
  ASSERT_EQ(a.size(), 8u);
  EXPECT_EQ(a.checksum(), b.checksum());
  for (const auto& p : a.prompts) EXPECT_EQ(p.shape(), (Shape{32, 32, 3}));
  EXPECT_NE(a.checksum(), init_bank(8, 32, 32, 6, d).checksum());
}

TEST(Bank, InitDistribution) {
  auto bank = init_bank(8, 32, 32, 5, EncoderDims{});
  for (const auto& p : bank.prompts) {
    double s = 0, s2 = 0;
    for (float v : p.data()) {
      s += v;
      s2 += double(v) * v;
    }
    const double n = double(p.size()), mean = s / n;
    EXPECT_NEAR(mean, 0.0, 0.002);
    EXPECT_NEAR(std::sqrt(s2 / n - mean * mean), 0.02, 0.002);
  }
}

TEST(Bank, IncompatibleDims) {
  EXPECT_THROW(init_bank(8, 30, 32, 1, EncoderDims{}), DimensionError);
  EXPECT_THROW(init_bank(8, 16, 16, 1, EncoderDims{}), DimensionError);
}

TEST(PvpSimilarities, MatchingDirectionGivesGamma) {
  const auto& t = task();
  const auto feats = bank_features(t.enc, t.bank);
  const std::size_t D = t.enc.dims().latent;
  for (std::size_t k : {0u, 5u}) {
    Tensor h({D}, std::vector<float>(feats.data().begin() + k * D, feats.data().begin() + (k + 1) * D));
    const auto s = pvp_similarities(t.enc, t.bank, h, 4.0f);
    EXPECT_NEAR(s(k), 4.0f, 1e-5);
    for (float v : s.data()) EXPECT_LE(std::abs(v), 4.0f + 1e-5f);
  }
}

TEST(PvpSimilarities, PermutingBankPermutesScores) {
  const auto& t = task();
  const auto& h = t.encoded[0].global;
  const auto s = pvp_similarities(t.enc, t.bank, h);
  PvpBank rev = t.bank;
  std::reverse(rev.prompts.begin(), rev.prompts.end());
  const auto r = pvp_similarities(t.enc, rev, h);
  const std::size_t N = s.size();
  for (std::size_t i = 0; i < N; ++i) EXPECT_EQ(s(i), r(N - 1 - i));
}

TEST(TrainPvp, SingleClassHasNoPairs) {
  const CategorySet one{{"car"}, {{"automobile"}}};
  const auto enc = FrozenDualEncoder::build(3, EncoderDims{}, vocab_spec(one));
  const auto corpus = generate_corpus(one, 40, 1);
  PvpBank bank = init_bank(1, 32, 32, 1, enc.dims());
  PvpTrainConfig cfg;
  cfg.epochs = 2;
  const auto hist = train_pvp(enc, bank, corpus, cfg);
  ASSERT_FALSE(hist.steps.empty());
  for (const auto& row : hist.steps) EXPECT_EQ(row.loss, 0.0);
}

TEST(TrainPvp, DefaultTaskLossFallsTenfold) {
  const auto& h = task().history;
  ASSERT_EQ(h.epoch_mean.size(), task().config.pvp.epochs);
  EXPECT_LT(h.epoch_mean.back(), 0.1 * h.epoch_mean.front())
      << h.epoch_mean.front() << " -> " << h.epoch_mean.back();
}

TEST(TrainPvp, EpochLossNonIncreasing) {
  const auto& m = task().history.epoch_mean;
  for (std::size_t e = 1; e < m.size(); ++e) EXPECT_LE(m[e], m[e - 1]) << "epoch " << e + 1;
}

TEST(TrainPvp, EncoderFrozenAndBankFinite) {
  const auto& t = task();
  EXPECT_EQ(t.enc.checksum(), t.enc_sum_before);
  EXPECT_NE(t.bank.checksum(), t.initial.checksum());
  EXPECT_EQ(t.bank.size(), t.enc.num_classes());
  for (const auto& p : t.bank.prompts)
    for (float v : p.data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(TrainPvp, BankSizeIndependentOfBatchSize) {
  const auto& t = task();
  std::vector<EncodedText> corpus(t.encoded.begin(), t.encoded.begin() + 64);
  for (std::size_t bs : {1u, 7u, 32u}) {
    PvpBank bank = init_bank(t.enc.num_classes(), 32, 32, 3, t.enc.dims());
    auto cfg = pvp_config(t.config);
    cfg.epochs = 1;
    cfg.batch_size = bs;
    train_pvp(t.enc, bank, corpus, cfg);
    EXPECT_EQ(bank.size(), t.enc.num_classes());
  }
}

TEST(TrainPvp, SkipsRecordsWithoutPositives) {
  const auto& t = task();
  std::vector<EncodedText> corpus(t.encoded.begin(), t.encoded.begin() + 20);
  corpus[3].labels.clear();
  corpus[9].labels.clear();
  PvpBank bank = init_bank(t.enc.num_classes(), 32, 32, 3, t.enc.dims());
  auto cfg = pvp_config(t.config);
  cfg.epochs = 1;
  EXPECT_EQ(train_pvp(t.enc, bank, corpus, cfg).skipped_records, 2u);
}

TEST(TrainPvp, NanAborts) {
  const auto& t = task();
  std::vector<EncodedText> corpus(t.encoded.begin(), t.encoded.begin() + 8);
  PvpBank bank = init_bank(t.enc.num_classes(), 32, 32, 3, t.enc.dims());
  bank.prompts[2].mutable_data()[0] = std::nanf("");
  auto cfg = pvp_config(t.config);
  cfg.epochs = 1;
  EXPECT_THROW(train_pvp(t.enc, bank, corpus, cfg), NumericalError);
}

TEST(TrainPvp, EmptyCorpusRejected) {
  const auto& t = task();
  PvpBank bank = init_bank(t.enc.num_classes(), 32, 32, 3, t.enc.dims());
  EXPECT_THROW(train_pvp(t.enc, bank, std::vector<EncodedText>{}, pvp_config(t.config)), InputError);
}

TEST(TrainPvp, ConfigValidation) {
  PvpTrainConfig c;
  c.margin = 0;
  EXPECT_THROW(c.validate(), ParameterError);
  c = {};
  c.lr = -1;
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(TrainPvp, ClassOrderEquivariance) {
  const auto& t = task();
  const std::size_t N = t.enc.num_classes();
  std::vector<EncodedText> corpus(t.encoded.begin(), t.encoded.begin() + 96);
  std::vector<std::size_t> perm(N);  // new index of class c
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(77);
  rng.shuffle(perm);
  auto permuted = corpus;
  for (auto& e : permuted) {
    for (auto& l : e.labels) l = perm[l];
    std::sort(e.labels.begin(), e.labels.end());
  }
  PvpBank a = init_bank(N, 32, 32, 3, t.enc.dims());
  PvpBank b = a;
  for (std::size_t c = 0; c < N; ++c) b.prompts[perm[c]] = a.prompts[c].detach();
  for (auto& p : a.prompts) p = p.detach();
  auto cfg = pvp_config(t.config);
  cfg.epochs = 2;
  const auto ha = train_pvp(t.enc, a, corpus, cfg);
  const auto hb = train_pvp(t.enc, b, permuted, cfg);
  ASSERT_EQ(ha.steps.size(), hb.steps.size());
  for (std::size_t i = 0; i < ha.steps.size(); ++i) EXPECT_NEAR(ha.steps[i].loss, hb.steps[i].loss, 1e-5);
  for (std::size_t c = 0; c < N; ++c) {
    const auto pa = a.prompts[c].data(), pb = b.prompts[perm[c]].data();
    double worst = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, double(std::abs(pa[i] - pb[i])));
    EXPECT_LT(worst, 1e-5) << "class " << c;
  }
}

TEST(ZeroShot, ScoresBoundedAndDeterministic) {
  const auto& t = task();
  for (std::size_t i = 0; i < 5; ++i) {
    const auto a = zero_shot_scores_pvp(t.enc, t.bank, t.eval_set[i].image);
    const auto b = zero_shot_scores_pvp(t.enc, t.bank, t.eval_set[i].image);
    EXPECT_EQ(a, b);
    for (float v : a) EXPECT_LE(std::abs(v), 4.0f + 1e-5f);
  }
}

TEST(ZeroShot, SelfRetrieval) {
  const auto& t = task();
  for (std::size_t k = 0; k < t.bank.size(); ++k) {
    const auto s = zero_shot_scores_pvp(t.enc, t.bank, t.bank.prompts[k]);
    EXPECT_EQ(std::size_t(std::max_element(s.begin(), s.end()) - s.begin()), k);
  }
}

TEST(ZeroShot, UntrainedBankNearChance) {
  const auto& t = task();
  // Random scorer on the same images, averaged over a few draws.
  Rng rng(99);
  const auto labels = label_matrix(t.eval_set, t.enc.num_classes());
  double random_map = 0;
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<std::vector<double>> scores(t.eval_set.size(), std::vector<double>(t.enc.num_classes()));
    for (auto& row : scores)
      for (auto& v : row) v = rng.uniform();
    random_map += mean_average_precision(scores, labels).map / 5;
  }
  EXPECT_NEAR(zero_shot_map(t, t.initial), random_map, 0.15);
}

TEST(ZeroShot, TrainedBankBeatsChance) {
  EXPECT_GE(zero_shot_map(task(), task().bank), 0.90);
}

}  // namespace
}  // namespace pvpl

// Runs the acceptance criteria on the default toy task and prints one
// PASS/FAIL line per criterion. Exit code 0 iff all pass.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "pvpl/checkpoint.hpp"
#include "pvpl/config.hpp"
#include "pvpl/evalkit.hpp"
#include "pvpl/gradsuite.hpp"
#include "pvpl/pipeline.hpp"
#include "pvpl/rng.hpp"
#include "pvpl/text.hpp"

namespace fs = std::filesystem;
using namespace pvpl;

namespace {

struct Result {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Result gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteConfig gc;
  gc.seed = RunConfig{}.gradcheck_seed;
  const auto reports = run_gradient_suite(gc);
  const double secs = seconds_since(t0);
  std::size_t failed = 0;
  double worst = 0;
  bool ranking = false, tpc = false;
  for (const auto& r : reports) {
    failed += !r.passed() || r.points != gc.points;
    worst = std::max(worst, r.max_rel_err);
    ranking |= r.op == "ranking_loss";
    tpc |= r.op.rfind("tpc_loss", 0) == 0;
  }
  std::ostringstream d;
  d << reports.size() << " ops, " << failed << " failing, max rel-err " << fmt("%.2e", worst) << ", "
    << fmt("%.2f", secs) << " s";
  if (!ranking || !tpc) d << ", missing a loss";
  return {failed == 0 && ranking && tpc && secs < 60.0, d.str()};
}

// Rank-by-rank precision sum over a full sort, ties by index.
std::optional<double> brute_ap(const std::vector<double>& s, const std::vector<bool>& rel) {
  std::vector<std::size_t> idx(s.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s[a] > s[b]; });
  double sum = 0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < idx.size(); ++k)
    if (rel[idx[k]]) sum += double(++hits) / double(k + 1);
  if (hits == 0) return std::nullopt;
  return sum / double(hits);
}

Result metric_oracle() {
  bool ok = true;
  std::ostringstream d;
  const double hand1 = *average_precision({3, 2, 1}, {true, false, true});
  const double hand2 = *average_precision({2, 1}, {false, true});
  ok &= std::abs(hand1 - 5.0 / 6.0) < 1e-12 && std::abs(hand2 - 0.5) < 1e-12;
  d << "hand " << fmt("%.6f", hand1) << "/" << fmt("%.6f", hand2);

  Rng rng(Rng::derive(2, 0));
  double worst = 0;
  int instances = 0;
  std::vector<std::pair<std::vector<double>, std::vector<bool>>> kept;
  while (instances < 50) {
    const std::size_t n = 1 + rng.index(12);
    std::vector<double> s(n);
    std::vector<bool> rel(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = instances % 2 ? rng.normal() : double(rng.index(3));
      rel[i] = rng.uniform() < 0.4;
    }
    const auto ap = average_precision(s, rel);
    const auto oracle = brute_ap(s, rel);
    if (ap.has_value() != oracle.has_value()) ok = false;
    if (!oracle) continue;
    worst = std::max(worst, std::abs(*ap - *oracle));
    kept.emplace_back(s, rel);
    ++instances;
  }
  ok &= worst <= 1e-9;
  d << ", 50 instances max |diff| " << fmt("%.1e", worst);

  // Strictly increasing maps: affine, exp, cubic, atan.
  double tworst = 0;
  for (int t = 0; t < 20; ++t) {
    const double a = 0.1 + rng.uniform() * 5, b = rng.normal() * 3;
    std::function<double(double)> f;
    switch (t % 4) {
      case 0: f = [=](double x) { return a * x + b; }; break;
      case 1: f = [=](double x) { return std::exp(a * 0.2 * x) + b; }; break;
      case 2: f = [=](double x) { return a * x * x * x + x + b; }; break;
      default: f = [=](double x) { return std::atan(a * x) + b; }; break;
    }
    for (const auto& [s, rel] : kept) {
      std::vector<double> u(s.size());
      std::transform(s.begin(), s.end(), u.begin(), f);
      tworst = std::max(tworst, std::abs(*average_precision(u, rel) - *average_precision(s, rel)));
    }
  }
  ok &= tworst <= 1e-12;
  d << ", 20 monotone transforms max |diff| " << fmt("%.1e", tworst);
  return {ok, d.str()};
}

struct Stage1Run {
  PipelineConfig config;
  FrozenDualEncoder enc;
  std::vector<EncodedText> corpus;
  PvpBank bank;
  TrainHistory history;
  double seconds = 0;
  std::string enc_before;

  Stage1Run() : enc(build_encoder(config)) {
    const auto t0 = std::chrono::steady_clock::now();
    enc_before = enc.checksum();
    corpus = encode_records(enc, build_corpus(config, config.stages).records);
    const auto& d = enc.dims();
    bank = init_bank(enc.num_classes(), d.image, d.image, stage_seed(config, SeedStream::pvp_init), d);
    history = train_pvp(enc, bank, corpus, pvp_config(config));
    seconds = seconds_since(t0);
  }
};

Result stage1_efficacy(const Stage1Run& s) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto images = eval_images(s.config, s.enc);
  const auto scores = pvp_score_matrix(s.enc, s.bank, images, s.config.pvp.gamma);
  std::vector<std::vector<double>> d(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) d[i].assign(scores[i].begin(), scores[i].end());
  const double map = mean_average_precision(d, label_matrix(images, s.enc.num_classes())).map;
  const double secs = s.seconds + seconds_since(t0);
  const auto& em = s.history.epoch_mean;
  const double drop = em.empty() ? 0.0 : 1.0 - em.back() / em.front();
  const bool ok = s.corpus.size() > 0 && drop >= 0.90 && map >= 0.90 && secs < 300.0 &&
                  s.enc.num_classes() == 8 && s.config.corpus.count == 2000 && images.size() == 200;
  std::ostringstream o;
  o << "epoch loss " << fmt("%.4f", em.front()) << " -> " << fmt("%.4f", em.back()) << " (-"
    << fmt("%.1f", 100 * drop) << "%), zero-shot mAP " << fmt("%.4f", map) << " on " << images.size()
    << " images, " << fmt("%.1f", secs) << " s";
  return {ok, o.str()};
}

Result stage2_efficacy(const fs::path& ablation_csv) {
  std::ifstream in(ablation_csv);
  if (!in) return {false, "no ablation CSV at " + ablation_csv.string()};
  std::stringstream buf;
  buf << in.rdbuf();
  const auto rows = parse_ablation_csv(buf.str());
  auto get = [&](const std::string& name) -> std::optional<double> {
    for (const auto& r : rows)
      if (r.stage == name) return r.map;
    return std::nullopt;
  };
  const auto base = get("baseline"), pvp = get("+pvp"), tr = get("+transfer"), dual = get("+dual-adapter"),
             tta = get("+tta");
  if (!base || !pvp || !tr || !dual || !tta) return {false, "ablation CSV lacks a required row"};
  const bool a = *pvp > *base, b = *tr >= *pvp, c = *tta >= *dual - 0.01;
  std::ostringstream o;
  o << "baseline " << fmt("%.6f", *base) << " < +pvp " << fmt("%.6f", *pvp) << (a ? " ok" : " NO")
    << "; +transfer " << fmt("%.6f", *tr) << " >= +pvp" << (b ? " ok" : " NO") << "; +tta "
    << fmt("%.6f", *tta) << " >= +dual-adapter " << fmt("%.6f", *dual) << " - 0.01" << (c ? " ok" : " NO");
  return {a && b && c, o.str()};
}

Result freeze_contracts(const Stage1Run& s, const fs::path& run_dir, const std::string& binary) {
  bool ok = s.enc.checksum() == s.enc_before;
  std::ostringstream o;
  o << "encoder after stage 1 " << (ok ? "unchanged" : "CHANGED");

  const auto bank_before = s.bank.checksum();
  const auto tc = transfer_config(s.config, s.config.stages);
  auto prompts = init_prompts(s.enc, s.config.categories, tc.context_length,
                              stage_seed(s.config, SeedStream::prompt_init));
  auto adapter = init_adapter(s.enc.dims().latent, tc);
  train_transfer(s.enc, s.bank, prompts, adapter, s.corpus, tc);
  const bool enc2 = s.enc.checksum() == s.enc_before, bank2 = s.bank.checksum() == bank_before;
  ok &= enc2 && bank2;
  o << ", after stage 2 " << (enc2 ? "unchanged" : "CHANGED") << ", bank across stage 2 "
    << (bank2 ? "unchanged" : "CHANGED");

  // Inference from a checkpoint with every bank entry removed.
  try {
    auto ck = load_checkpoint((run_dir / "transfer.ckpt").string());
    const std::size_t removed = ck.erase_prefix("pvp.");
    const auto stripped = run_dir / "stripped";
    fs::create_directories(stripped);
    save_checkpoint((stripped / "transfer.ckpt").string(), ck);
    fs::copy_file(run_dir / "run.toml", stripped / "run.toml", fs::copy_options::overwrite_existing);
    const int rc = std::system((binary + " -q -c " + (stripped / "run.toml").string() + " eval").c_str());
    bool same = rc == 0 && removed > 0;
    for (const char* f : {"report.json", "report.txt", "report_scores.csv"})
      same &= read_file_bytes((stripped / f).string()) == read_file_bytes((run_dir / f).string());
    ok &= same;
    o << ", eval without bank (" << removed << " entries removed) " << (same ? "byte-identical" : "DIFFERS");
  } catch (const std::exception& e) {
    ok = false;
    o << ", bank removal check failed: " << e.what();
  }
  return {ok, o.str()};
}

Result shape_contract(const Stage1Run& s) {
  const std::size_t N = s.enc.num_classes();
  std::size_t steps = 0, bad = 0;
  std::ostringstream o;
  for (std::size_t bs : {1u, 7u, 32u}) {
    auto tc = transfer_config(s.config, s.config.stages);
    tc.batch_size = bs;
    tc.epochs = 1;
    auto prompts = init_prompts(s.enc, s.config.categories, tc.context_length,
                                stage_seed(s.config, SeedStream::prompt_init));
    auto adapter = init_adapter(s.enc.dims().latent, tc);
    std::size_t here = 0;
    train_transfer(s.enc, s.bank, prompts, adapter, s.corpus, tc, [&](const TransferStep& st) {
      ++here;
      if (st.similarity_shape != Shape{N, N}) ++bad;
    });
    steps += here;
    o << "batch " << bs << ": " << here << " steps; ";
  }
  o << bad << " steps with S not " << N << "x" << N;
  return {bad == 0 && steps > 0, o.str()};
}

Result reproducibility(const fs::path& a, const fs::path& b) {
  std::size_t compared = 0, differing = 0;
  std::string first;
  for (const auto& entry : fs::directory_iterator(a)) {
    if (!entry.is_regular_file() || entry.path().filename() == "run.toml") continue;
    const auto name = entry.path().filename();
    ++compared;
    if (!fs::exists(b / name) || read_file_bytes(entry.path().string()) != read_file_bytes((b / name).string())) {
      ++differing;
      if (first.empty()) first = name.string();
    }
  }
  std::ostringstream o;
  o << compared << " output files from 6 commands compared, " << differing << " differ";
  if (!first.empty()) o << " (first: " << first << ")";
  return {compared >= 11 && differing == 0, o.str()};
}

Result corpus_contract() {
  const PipelineConfig config;
  const auto built = build_corpus(config, config.stages);
  const auto& cats = config.categories;
  const auto stats = corpus_stats(built.records, cats);
  std::size_t long_ones = 0, mismatched = 0;
  for (const auto& r : built.records) {
    long_ones += split_words(r.sentence).size() >= 15;
    mismatched += extract_labels(cats, r.sentence) != r.labels;
  }
  std::ostringstream o;
  o << built.records.size() << " records, imbalance " << fmt("%.3f", stats.imbalance_ratio) << ", "
    << long_ones << " with >= 15 words, " << mismatched << " failing the label round trip";
  return {!built.records.empty() && stats.imbalance_ratio <= 1.3 && long_ones == 0 && mismatched == 0,
          o.str()};
}

bool run_cli(const std::string& binary, const fs::path& dir, const char* cmd) {
  const std::string line = binary + " -q -c " + (dir / "run.toml").string() + " " + cmd;
  const int rc = std::system(line.c_str());
  if (rc != 0) std::cerr << "command failed (" << rc << "): " << line << "\n";
  return rc == 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::string binary = PVPL_BINARY;
  if (argc > 1) binary = argv[1];
  const auto root = fs::temp_directory_path() / ("pvpl_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const fs::path a = root / "a", b = root / "b";

  Result r[8];
  try {
    bool cli_ok = true;
    for (const auto& dir : {a, b}) {
      fs::create_directories(dir);
      std::ofstream(dir / "run.toml") << "[run]\nseed = 7\n";
      for (const char* cmd : {"gen-corpus", "train-pvp", "transfer", "eval", "ablation"})
        cli_ok &= run_cli(binary, dir, cmd);
      // gradcheck exits 3 on failure; its report is compared either way.
      run_cli(binary, dir, "gradcheck");
    }
    r[0] = gradient_suite();
    r[1] = metric_oracle();
    const Stage1Run s1;
    r[2] = stage1_efficacy(s1);
    r[3] = stage2_efficacy(a / "ablation.csv");
    r[4] = freeze_contracts(s1, a, binary);
    r[5] = shape_contract(s1);
    r[6] = reproducibility(a, b);
    if (!cli_ok) {
      r[6].pass = false;
      r[6].detail += "; a CLI command exited nonzero";
    }
    r[7] = corpus_contract();
  } catch (const std::exception& e) {
    std::cerr << "acceptance aborted: " << e.what() << "\n";
  }
  fs::remove_all(root);

  const char* names[8] = {"gradient suite", "metric oracle",   "stage-1 efficacy", "stage-2 ordering",
                          "freeze contracts", "shape contract", "reproducibility",  "corpus contract"};
  int failed = 0;
  for (int i = 0; i < 8; ++i) {
    std::cout << (r[i].pass ? "PASS" : "FAIL") << " criterion " << i + 1 << " (" << names[i]
              << "): " << r[i].detail << "\n";
    failed += !r[i].pass;
  }
  return failed == 0 ? 0 : 1;
}

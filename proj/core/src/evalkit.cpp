#include "pvpl/evalkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "pvpl/ops.hpp"

namespace pvpl {

using ojson = nlohmann::ordered_json;

namespace {

// Run fn(i) for i in [0, n) on up to `threads` workers with static striping.
template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t i = t; i < n; i += threads) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<float> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

PromptClassifier PromptClassifier::build(const FrozenDualEncoder& enc, const TextPromptSet& prompts,
                                         const DualAdapter& adapter, const EvalSettings& settings) {
  auto [G, L] = class_embeddings(enc, prompts);
  return {apply_adapter(adapter, Branch::text, G).detach(), L.detach(), settings};
}

ScorePair infer_image(const FrozenDualEncoder& enc, const PromptClassifier& c,
                      const Tensor& image) {
  const auto out = enc.encode_image(image.detach());
  ScorePair s;
  s.p = to_vec(global_scores(c.global, out.global, c.settings.gamma));
  s.p_prime = to_vec(local_scores(c.local, out.sequence, c.settings.gamma, c.settings.tau_local));
  const float w = c.settings.fusion_weight;
  s.fused.resize(s.p.size());
  for (std::size_t i = 0; i < s.p.size(); ++i) s.fused[i] = w * s.p[i] + (1.0f - w) * s.p_prime[i];
  return s;
}

ScorePair infer_image(const FrozenDualEncoder& enc, const TextPromptSet& prompts,
                      const DualAdapter& adapter, const Tensor& image,
                      const EvalSettings& settings) {
  return infer_image(enc, PromptClassifier::build(enc, prompts, adapter, settings), image);
}

std::vector<Tensor> tta_views(const Tensor& image, std::size_t views, std::uint64_t seed) {
  if (views < 1) throw ParameterError("TTA needs at least one view");
  if (image.rank() != 3 || image.dim(0) != image.dim(1) || image.dim(2) != 3) {
    throw DimensionError("TTA expects a square H x W x 3 image, got " + shape_string(image.shape()));
  }
  struct View {
    bool flip;
    int dx, dy;
  };
  std::vector<View> shifts = {{false, 2, 0}, {false, -2, 0}, {false, 0, 2}, {false, 0, -2},
                              {true, 2, 0},  {true, -2, 0},  {true, 0, 2},  {true, 0, -2}};
  if (views > shifts.size() + 2) {
    throw ParameterError("at most " + std::to_string(shifts.size() + 2) + " TTA views");
  }
  Rng rng(seed);
  rng.shuffle(shifts);
  std::vector<View> extra{{true, 0, 0}};
  extra.insert(extra.end(), shifts.begin(), shifts.end());
  const auto S = static_cast<long>(image.dim(0));
  auto apply = [&](const View& v) {
    std::vector<float> out(image.size());
    const float* in = image.data().data();
    for (long y = 0; y < S; ++y)
      for (long x = 0; x < S; ++x) {
        long sx = ((x - v.dx) % S + S) % S;
        const long sy = ((y - v.dy) % S + S) % S;
        if (v.flip) sx = S - 1 - sx;
        for (long c = 0; c < 3; ++c) out[(y * S + x) * 3 + c] = in[(sy * S + sx) * 3 + c];
      }
    return Tensor(image.shape(), std::move(out));
  };
  std::vector<Tensor> out{image.detach()};
  for (std::size_t i = 0; i + 1 < views; ++i) out.push_back(apply(extra[i]));
  return out;
}

ScorePair tta_scores(const FrozenDualEncoder& enc, const PromptClassifier& classifier,
                     const Tensor& image, std::size_t views, std::uint64_t seed) {
  const auto imgs = tta_views(image, views, seed);
  ScorePair acc;
  for (const auto& v : imgs) {
    const auto s = infer_image(enc, classifier, v);
    if (acc.p.empty()) {
      acc = s;
      continue;
    }
    for (std::size_t i = 0; i < s.p.size(); ++i) {
      acc.p[i] += s.p[i];
      acc.p_prime[i] += s.p_prime[i];
      acc.fused[i] += s.fused[i];
    }
  }
  if (imgs.size() > 1) {
    const float inv = 1.0f / static_cast<float>(imgs.size());
    for (std::size_t i = 0; i < acc.p.size(); ++i) {
      acc.p[i] *= inv;
      acc.p_prime[i] *= inv;
      acc.fused[i] *= inv;
    }
  }
  return acc;
}

std::optional<double> average_precision(const std::vector<double>& scores,
                                        const std::vector<bool>& relevance) {
  if (scores.size() != relevance.size()) {
    throw DimensionError("average_precision: " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(relevance.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double acc = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!relevance[order[k]]) continue;
    ++hits;
    acc += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  if (hits == 0) return std::nullopt;
  return acc / static_cast<double>(hits);
}

EvalReport mean_average_precision(const std::vector<std::vector<double>>& scores,
                                  const std::vector<std::vector<bool>>& labels) {
  if (scores.size() != labels.size()) {
    throw InputError("score matrix has " + std::to_string(scores.size()) +
                     " rows, label matrix " + std::to_string(labels.size()));
  }
  const std::size_t N = scores.empty() ? 0 : scores[0].size();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != N || labels[i].size() != N) {
      throw InputError("ragged score or label row " + std::to_string(i));
    }
  }
  EvalReport rep;
  double total = 0.0;
  std::size_t counted = 0;
  std::vector<double> col(scores.size());
  std::vector<bool> rel(scores.size());
  for (std::size_t c = 0; c < N; ++c) {
    for (std::size_t i = 0; i < scores.size(); ++i) {
      col[i] = scores[i][c];
      rel[i] = labels[i][c];
    }
    auto ap = average_precision(col, rel);
    rep.per_class_ap.push_back(ap);
    if (ap) {
      total += *ap;
      ++counted;
    } else {
      ++rep.excluded_classes;
    }
  }
  if (counted == 0) throw InputError("empty evaluation: no class has a positive item");
  rep.map = total / static_cast<double>(counted);
  return rep;
}

std::vector<std::vector<bool>> label_matrix(const std::vector<LabeledImage>& images,
                                            std::size_t num_classes) {
  std::vector<std::vector<bool>> out;
  out.reserve(images.size());
  for (const auto& im : images) {
    std::vector<bool> row(num_classes, false);
    for (std::size_t c : im.labels) {
      if (c >= num_classes) throw InputError("image label out of range");
      row[c] = true;
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<ScorePair> score_images(const FrozenDualEncoder& enc,
                                    const PromptClassifier& classifier,
                                    const std::vector<LabeledImage>& images) {
  std::vector<ScorePair> out(images.size());
  const auto& st = classifier.settings;
  parallel_for(images.size(), st.threads, [&](std::size_t i) {
    out[i] = st.tta_views > 1 ? tta_scores(enc, classifier, images[i].image, st.tta_views, st.tta_seed)
                              : infer_image(enc, classifier, images[i].image);
  });
  return out;
}

EvalReport evaluate(const FrozenDualEncoder& enc, const PromptClassifier& classifier,
                    const std::vector<LabeledImage>& images) {
  const auto scored = score_images(enc, classifier, images);
  std::vector<std::vector<double>> m;
  std::vector<std::vector<float>> fused;
  for (const auto& s : scored) {
    m.emplace_back(s.fused.begin(), s.fused.end());
    fused.push_back(s.fused);
  }
  auto rep = mean_average_precision(m, label_matrix(images, classifier.global.dim(0)));
  rep.fused_scores = std::move(fused);
  return rep;
}

std::vector<std::vector<float>> pvp_score_matrix(const FrozenDualEncoder& enc,
                                                 const PvpBank& bank,
                                                 const std::vector<LabeledImage>& images,
                                                 float gamma, std::size_t threads) {
  PvpBank frozen;
  for (const auto& p : bank.prompts) frozen.prompts.push_back(p.detach());
  const Tensor F = bank_features(enc, frozen).detach();
  std::vector<std::vector<float>> out(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) {
    const auto g = enc.encode_image(images[i].image.detach()).global;
    out[i] = to_vec(global_scores(F, g, gamma));
  });
  return out;
}

std::string EvalReport::to_json() const {
  ojson j;
  j["stage"] = stage;
  j["map"] = map;
  j["excluded_classes"] = excluded_classes;
  j["per_class_ap"] = ojson::array();
  for (std::size_t c = 0; c < per_class_ap.size(); ++c) {
    ojson e;
    e["class"] = c < class_names.size() ? class_names[c] : std::to_string(c);
    if (per_class_ap[c]) {
      e["ap"] = *per_class_ap[c];
    } else {
      e["ap"] = nullptr;
    }
    j["per_class_ap"].push_back(e);
  }
  j["config"] = config_echo.empty() ? ojson::object() : ojson::parse(config_echo);
  j["fused_scores"] = fused_scores;
  return j.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
  std::size_t width = 5;
  for (const auto& n : class_names) width = std::max(width, n.size());
  std::ostringstream os;
  if (!stage.empty()) os << "stage: " << stage << "\n";
  auto line = [&](const std::string& name, const std::string& value) {
    os << name << std::string(width - name.size() + 2, ' ') << value << "\n";
  };
  line("class", "AP");
  for (std::size_t c = 0; c < per_class_ap.size(); ++c) {
    const std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
    line(name, per_class_ap[c] ? fmt(*per_class_ap[c]) : "n/a (no positives)");
  }
  line("mAP", fmt(map));
  return os.str();
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "stage,mAP\n";
  for (const auto& r : rows) {
    if (r.stage.find_first_of(",\n\"") != std::string::npos) {
      throw InputError("stage name '" + r.stage + "' cannot be written to CSV");
    }
    out += r.stage + "," + fmt(r.map, "%.17g") + "\n";
  }
  return out;
}

std::vector<AblationRow> parse_ablation_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "stage,mAP") throw InputError("ablation CSV: bad header");
  std::vector<AblationRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw InputError("ablation CSV: malformed row '" + line + "'");
    const std::string value = line.substr(comma + 1);
    double map = 0.0;
    const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), map);
    if (ec != std::errc() || end != value.data() + value.size()) {
      throw InputError("ablation CSV: bad mAP in row '" + line + "'");
    }
    rows.push_back({line.substr(0, comma), map});
  }
  return rows;
}

std::string ablation_table_text(const std::vector<AblationRow>& rows) {
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.stage.size());
  std::ostringstream os;
  os << "stage" << std::string(width - 5 + 2, ' ') << "mAP\n";
  for (const auto& r : rows) os << r.stage << std::string(width - r.stage.size() + 2, ' ') << fmt(r.map) << "\n";
  return os.str();
}

}  // namespace pvpl

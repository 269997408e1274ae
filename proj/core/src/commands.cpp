#include "pvpl/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "pvpl/checkpoint.hpp"
#include "pvpl/gradsuite.hpp"

namespace pvpl {

namespace fs = std::filesystem;

namespace {

void require_file(const std::string& path, const char* what) {
  if (path.empty() || !fs::is_regular_file(path)) {
    throw IoError(std::string(what) + " not found: " + (path.empty() ? "<unset>" : path));
  }
}

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

void write_output(const std::string& path, const std::string& text) {
  ensure_parent(path);
  write_text_file(path, text);
  const auto back = read_file_bytes(path);
  if (back.size() != text.size() || !std::equal(back.begin(), back.end(), text.begin())) {
    throw IoError("validation failed after writing " + path);
  }
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  ensure_parent(path);
  save_checkpoint(path, ck);
  load_checkpoint(path);  // CRC and framing check
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::vector<CorpusRecord> load_corpus(const RunConfig& c) {
  require_file(c.paths.corpus, "corpus");
  auto records = read_corpus(c.paths.corpus, c.pipeline.categories);
  if (records.empty()) throw InputError(c.paths.corpus + ": corpus is empty");
  return records;
}

// The checkpoint's encoder entries must be the encoder this config builds.
void check_encoder(const Checkpoint& ck, const FrozenDualEncoder& enc, const std::string& path) {
  for (const auto& [name, t] : enc.parameters()) {
    const auto* stored = ck.find(name);
    if (!stored) throw IoError(path + ": missing encoder entry '" + name + "'");
    if (stored->shape() != t.shape() ||
        !std::equal(t.data().begin(), t.data().end(), stored->data().begin())) {
      throw InputError(path + ": encoder entry '" + name +
                       "' differs from the encoder this config builds (seed or dims changed?)");
    }
  }
}

}  // namespace

void cmd_gen_corpus(const RunConfig& c, std::ostream& log) {
  const auto built = build_corpus(c.pipeline, c.pipeline.stages);
  const auto& cats = c.pipeline.categories;
  std::ostringstream corpus;
  write_corpus(corpus, built.records, cats);
  write_output(c.paths.corpus, corpus.str());
  const auto stats = corpus_stats(built.records, cats);
  write_output(c.paths.corpus_stats, stats_json(stats, cats));
  if (read_corpus(c.paths.corpus, cats).size() != built.records.size()) {
    throw IoError("validation failed: " + c.paths.corpus + " record count");
  }
  log << "generated " << built.generated.size() << " records, rejected " << built.rejected.size()
      << ", wrote " << built.records.size() << " to " << c.paths.corpus << "\n";
  log << "imbalance ratio " << num(stats.imbalance_ratio) << "\n";
}

void cmd_train_pvp(const RunConfig& c, std::ostream& log) {
  const auto records = load_corpus(c);
  const auto enc = build_encoder(c.pipeline);
  const auto enc_sum = enc.checksum();
  const auto encoded = encode_records(enc, records);
  const auto& d = enc.dims();
  auto bank = init_bank(enc.num_classes(), d.image, d.image,
                        stage_seed(c.pipeline, SeedStream::pvp_init), d);
  TrainHistory hist;
  try {
    hist = train_pvp(enc, bank, encoded, pvp_config(c.pipeline));
  } catch (const NumericalError& e) {
    const auto diag = c.paths.pvp_checkpoint + ".diag.txt";
    ensure_parent(diag);
    write_text_file(diag, std::string(e.what()) + "\nconfig: " + c.echo() + "\n");
    throw NumericalError(std::string(e.what()) + " (diagnostics: " + diag + ")");
  }
  if (enc.checksum() != enc_sum) throw NumericalError("encoder parameters changed during training");

  Checkpoint ck;
  ck.put(enc.parameters());
  ck.put(bank.named());
  ck.config_echo = c.echo();
  write_checkpoint(c.paths.pvp_checkpoint, ck);

  std::string csv = "epoch,step,loss\n";
  for (const auto& r : hist.steps) csv += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + num(r.loss) + "\n";
  write_output(c.paths.pvp_loss, csv);
  log << "trained PVP bank on " << encoded.size() << " records, epoch loss "
      << num(hist.epoch_mean.front()) << " -> " << num(hist.epoch_mean.back()) << "\n";
  log << "bank sha256 " << bank.checksum() << "\n";
}

void cmd_transfer(const RunConfig& c, std::ostream& log) {
  require_file(c.paths.pvp_checkpoint, "PVP checkpoint");
  const auto in = load_checkpoint(c.paths.pvp_checkpoint);
  const auto enc = build_encoder(c.pipeline);
  check_encoder(in, enc, c.paths.pvp_checkpoint);
  const auto bank = bank_from(in);
  const auto bank_sum = bank.checksum();
  const auto enc_sum = enc.checksum();
  const auto encoded = encode_records(enc, load_corpus(c));

  const auto tc = transfer_config(c.pipeline, c.pipeline.stages);
  auto prompts = init_prompts(enc, c.pipeline.categories, tc.context_length,
                              stage_seed(c.pipeline, SeedStream::prompt_init));
  auto adapter = init_adapter(enc.dims().latent, tc);
  const std::size_t N = enc.num_classes();
  std::string csv = "epoch,step,loss,tpc,global,local\n";
  train_transfer(enc, bank, prompts, adapter, encoded, tc, [&](const TransferStep& s) {
    if (tc.lambda_tpc > 0.0f && s.similarity_shape != Shape{N, N}) {
      throw DimensionError("similarity matrix is " + shape_string(s.similarity_shape));
    }
    csv += std::to_string(s.epoch) + "," + std::to_string(s.step) + "," + num(s.total) + "," +
           num(s.tpc) + "," + num(s.global) + "," + num(s.local) + "\n";
  });
  if (bank.checksum() != bank_sum) throw NumericalError("PVP bank changed during transfer");
  if (enc.checksum() != enc_sum) throw NumericalError("encoder parameters changed during transfer");

  Checkpoint out = in;
  out.put(prompts.named());
  out.put(adapter.named());
  out.config_echo = c.echo();
  write_checkpoint(c.paths.transfer_checkpoint, out);
  write_output(c.paths.transfer_loss, csv);
  log << "transferred into text prompts (tpc weight " << num(tc.lambda_tpc) << "), prompts sha256 "
      << prompts.checksum() << "\n";
}

void cmd_eval(const RunConfig& c, std::ostream& log) {
  require_file(c.paths.transfer_checkpoint, "transfer checkpoint");
  const auto ck = load_checkpoint(c.paths.transfer_checkpoint);
  const auto enc = build_encoder(c.pipeline);
  check_encoder(ck, enc, c.paths.transfer_checkpoint);
  const auto prompts = prompts_from(ck);
  const auto adapter = adapter_from(ck);
  if (prompts.num_classes() != enc.num_classes()) {
    throw DimensionError(c.paths.transfer_checkpoint + ": prompts cover " +
                         std::to_string(prompts.num_classes()) + " classes, config has " +
                         std::to_string(enc.num_classes()));
  }

  std::vector<LabeledImage> images;
  std::string source = "rendered fixtures";
  if (!c.paths.eval_images.empty()) {
    require_file(c.paths.eval_images, "eval image file");
    images = images_from(load_checkpoint(c.paths.eval_images));
    const std::size_t S = enc.dims().image;
    for (std::size_t i = 0; i < images.size(); ++i) {
      if (images[i].image.shape() != Shape{S, S, 3}) {
        throw DimensionError(c.paths.eval_images + ": image." + std::to_string(i) + " is " +
                             shape_string(images[i].image.shape()) + ", encoder expects " +
                             shape_string({S, S, 3}));
      }
      for (std::size_t l : images[i].labels)
        if (l >= enc.num_classes()) {
          throw InputError(c.paths.eval_images + ": labels." + std::to_string(i) +
                           " names class " + std::to_string(l) + " of " +
                           std::to_string(enc.num_classes()));
        }
    }
    source = c.paths.eval_images;
  } else {
    images = eval_images(c.pipeline, enc);
  }

  const auto settings = eval_settings(c.pipeline, c.pipeline.stages);
  const auto classifier = PromptClassifier::build(enc, prompts, adapter, settings);
  auto report = evaluate(enc, classifier, images);
  report.stage = "eval";
  report.class_names = c.pipeline.categories.names;
  report.config_echo = c.echo();

  std::string scores = "image";
  for (const auto& n : report.class_names) scores += "," + n;
  scores += "\n";
  for (std::size_t i = 0; i < report.fused_scores.size(); ++i) {
    scores += std::to_string(i);
    for (float v : report.fused_scores[i]) scores += "," + num(v);
    scores += "\n";
  }
  write_output(c.paths.report + ".json", report.to_json());
  write_output(c.paths.report + ".txt", report.to_table());
  write_output(c.paths.report + "_scores.csv", scores);
  log << "evaluated " << images.size() << " images (" << source << "), mAP " << num(report.map);
  if (report.excluded_classes) log << ", " << report.excluded_classes << " classes without positives excluded";
  log << "\n";
}

void cmd_ablation(const RunConfig& c, std::ostream& log) {
  const auto enc = build_encoder(c.pipeline);
  const auto images = eval_images(c.pipeline, enc);
  const auto stages = enabled_stages(c.pipeline.stages);
  const auto rows = ablation_table(c.pipeline, stages, images,
                                   [&](const std::string& line) { log << line << "\n"; });
  const auto csv = ablation_csv(rows);
  write_output(c.paths.ablation, csv);
  if (parse_ablation_csv(csv).size() != rows.size()) throw IoError("ablation CSV failed to parse back");
  log << ablation_table_text(rows);
}

bool cmd_gradcheck(const RunConfig& c, std::ostream& log) {
  GradSuiteConfig g;
  g.seed = c.gradcheck_seed;
  g.points = c.gradcheck_points;
  g.backward_scale = c.gradcheck_backward_scale;
  const auto reports = run_gradient_suite(g);
  const auto text = gradient_report_text(reports);
  write_output(c.paths.gradcheck, text);
  log << text;
  return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.passed(); });
}

}  // namespace pvpl

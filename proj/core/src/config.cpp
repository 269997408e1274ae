#include "pvpl/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include "json.hpp"

namespace pvpl {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Strip a trailing comment that is not inside a quoted string.
std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '\\' && quoted) {
      ++i;
    } else if (line[i] == '"') {
      quoted = !quoted;
    } else if (line[i] == '#' && !quoted) {
      return line.substr(0, i);
    }
  }
  return line;
}

bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

std::string unquote(const std::string& raw, const std::string& key) {
  if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"') {
    throw InputError(key + ": expected a double-quoted string, got " + raw);
  }
  std::string out;
  for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
    if (raw[i] == '\\' && i + 2 < raw.size()) {
      const char n = raw[++i];
      out += n == 'n' ? '\n' : n == 't' ? '\t' : n;
    } else {
      out += raw[i];
    }
  }
  return out;
}

template <class N>
N parse_number(const std::string& raw, const std::string& key) {
  N v{};
  const char* b = raw.data();
  const char* e = raw.data() + raw.size();
  const auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw InputError(key + ": malformed number '" + raw + "'");
  return v;
}

bool parse_bool(const std::string& raw, const std::string& key) {
  if (raw == "true") return true;
  if (raw == "false") return false;
  throw InputError(key + ": expected true or false, got '" + raw + "'");
}

struct Binding {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<ojson(const RunConfig&)> get;  // null for paths, which are not echoed
};

std::vector<Binding> bindings() {
  std::vector<Binding> b;
  auto add_float = [&](std::string key, auto getter) {
    b.push_back({key,
                 [getter, key](RunConfig& c, const std::string& v) {
                   getter(c) = static_cast<std::remove_reference_t<decltype(getter(c))>>(
                       parse_number<double>(v, key));
                 },
                 [getter](const RunConfig& c) { return ojson(getter(const_cast<RunConfig&>(c))); }});
  };
  auto add_uint = [&](std::string key, auto getter) {
    b.push_back({key,
                 [getter, key](RunConfig& c, const std::string& v) {
                   getter(c) = static_cast<std::remove_reference_t<decltype(getter(c))>>(
                       parse_number<std::uint64_t>(v, key));
                 },
                 [getter](const RunConfig& c) { return ojson(getter(const_cast<RunConfig&>(c))); }});
  };
  auto add_bool = [&](std::string key, auto getter) {
    b.push_back({key,
                 [getter, key](RunConfig& c, const std::string& v) { getter(c) = parse_bool(v, key); },
                 [getter](const RunConfig& c) { return ojson(getter(const_cast<RunConfig&>(c))); }});
  };
  auto add_path = [&](std::string key, auto getter) {
    b.push_back({key,
                 [getter, key](RunConfig& c, const std::string& v) { getter(c) = unquote(v, key); },
                 nullptr});
  };
#define PVPL_F(key, expr) add_float(key, [](RunConfig& c) -> auto& { return c.expr; })
#define PVPL_U(key, expr) add_uint(key, [](RunConfig& c) -> auto& { return c.expr; })
#define PVPL_B(key, expr) add_bool(key, [](RunConfig& c) -> auto& { return c.expr; })
#define PVPL_P(key, expr) add_path(key, [](RunConfig& c) -> auto& { return c.expr; })
  PVPL_U("run.seed", pipeline.seed);

  PVPL_U("encoder.text_width", pipeline.dims.text_width);
  PVPL_U("encoder.latent", pipeline.dims.latent);
  PVPL_U("encoder.patch", pipeline.dims.patch);
  PVPL_U("encoder.image", pipeline.dims.image);
  PVPL_U("encoder.max_seq", pipeline.dims.max_seq);

  PVPL_F("planting.cross_talk", pipeline.planting.cross_talk);
  PVPL_F("planting.object_bias", pipeline.planting.object_bias);
  PVPL_F("planting.class_salience", pipeline.planting.class_salience);
  PVPL_F("planting.eos_salience", pipeline.planting.eos_salience);
  PVPL_F("planting.attention_gain", pipeline.planting.attention_gain);
  PVPL_F("planting.scene_scale", pipeline.planting.scene_scale);
  PVPL_F("planting.token_noise", pipeline.planting.token_noise);
  PVPL_F("planting.pattern_gain", pipeline.planting.pattern_gain);
  PVPL_F("planting.projection_std", pipeline.planting.projection_std);
  PVPL_F("planting.position_std", pipeline.planting.position_std);
  PVPL_F("planting.clutter_amp", pipeline.planting.clutter_amp);
  PVPL_F("planting.clutter_object", pipeline.planting.clutter_object);
  PVPL_F("planting.pattern_std", pipeline.planting.pattern_std);

  PVPL_U("render.max_copies", pipeline.render.max_copies);
  PVPL_F("render.amp_lo", pipeline.render.amp_lo);
  PVPL_F("render.amp_hi", pipeline.render.amp_hi);
  PVPL_F("render.background_std", pipeline.render.background_std);
  PVPL_F("render.pixel_noise", pipeline.render.pixel_noise);

  PVPL_U("corpus.count", pipeline.corpus.count);
  PVPL_U("corpus.max_words", pipeline.corpus.max_words);
  PVPL_U("corpus.augment_factor", pipeline.corpus.augment_factor);
  PVPL_F("corpus.noise_rate", pipeline.corpus.noise_rate);

  PVPL_B("stages.augmentation", pipeline.stages.augmentation);
  PVPL_B("stages.reasonableness", pipeline.stages.reasonableness);
  PVPL_B("stages.noise", pipeline.stages.noise);
  PVPL_B("stages.pvp", pipeline.stages.pvp);
  PVPL_B("stages.transfer", pipeline.stages.transfer);
  PVPL_B("stages.dual_adapter", pipeline.stages.dual_adapter);
  PVPL_B("stages.tta", pipeline.stages.tta);

  PVPL_F("pvp.margin", pipeline.pvp.margin);
  PVPL_F("pvp.lr", pipeline.pvp.lr);
  PVPL_F("pvp.momentum", pipeline.pvp.momentum);
  PVPL_F("pvp.gamma", pipeline.pvp.gamma);
  PVPL_U("pvp.epochs", pipeline.pvp.epochs);
  PVPL_U("pvp.batch_size", pipeline.pvp.batch_size);

  PVPL_F("transfer.tau", pipeline.transfer.tau);
  PVPL_F("transfer.lambda_tpc", pipeline.transfer.lambda_tpc);
  PVPL_F("transfer.lambda_global", pipeline.transfer.lambda_global);
  PVPL_F("transfer.lambda_local", pipeline.transfer.lambda_local);
  PVPL_F("transfer.margin", pipeline.transfer.margin);
  PVPL_F("transfer.gamma", pipeline.transfer.gamma);
  PVPL_F("transfer.tau_local", pipeline.transfer.tau_local);
  PVPL_F("transfer.lr", pipeline.transfer.lr);
  PVPL_F("transfer.adapter_lr", pipeline.transfer.adapter_lr);
  PVPL_F("transfer.momentum", pipeline.transfer.momentum);
  PVPL_U("transfer.epochs", pipeline.transfer.epochs);
  PVPL_U("transfer.batch_size", pipeline.transfer.batch_size);
  PVPL_U("transfer.context_length", pipeline.transfer.context_length);
  PVPL_U("transfer.adapter_hidden", pipeline.transfer.adapter_hidden);
  PVPL_F("transfer.alpha_init", pipeline.transfer.alpha_init);

  PVPL_F("eval.fusion_weight", pipeline.eval.fusion_weight);
  PVPL_U("eval.tta_views", pipeline.eval.tta_views);
  PVPL_U("eval.threads", pipeline.eval.threads);
  PVPL_U("eval.images", pipeline.eval_images);

  PVPL_F("gradcheck.backward_scale", gradcheck_backward_scale);
  PVPL_U("gradcheck.points", gradcheck_points);
  PVPL_U("gradcheck.seed", gradcheck_seed);

  PVPL_P("paths.categories", paths.categories);
  PVPL_P("paths.corpus", paths.corpus);
  PVPL_P("paths.corpus_stats", paths.corpus_stats);
  PVPL_P("paths.pvp_checkpoint", paths.pvp_checkpoint);
  PVPL_P("paths.pvp_loss", paths.pvp_loss);
  PVPL_P("paths.transfer_checkpoint", paths.transfer_checkpoint);
  PVPL_P("paths.transfer_loss", paths.transfer_loss);
  PVPL_P("paths.report", paths.report);
  PVPL_P("paths.ablation", paths.ablation);
  PVPL_P("paths.gradcheck", paths.gradcheck);
  PVPL_P("paths.eval_images", paths.eval_images);
#undef PVPL_F
#undef PVPL_U
#undef PVPL_B
#undef PVPL_P
  return b;
}

const std::vector<Binding>& all_bindings() {
  static const auto b = bindings();
  return b;
}

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || base.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base) / p).lexically_normal().string();
}

}  // namespace

ConfigTable ConfigTable::parse(const std::string& text, const std::string& source) {
  ConfigTable t;
  std::istringstream in(text);
  std::string line, section = "run";
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto where = source + ":" + std::to_string(lineno) + ": ";
    const std::string s = trim(strip_comment(line));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw InputError(where + "unterminated section header");
      section = trim(s.substr(1, s.size() - 2));
      if (!valid_key(section)) throw InputError(where + "bad section name '" + section + "'");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw InputError(where + "expected key = value");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (!valid_key(key)) throw InputError(where + "bad key '" + key + "'");
    if (value.empty()) throw InputError(where + "missing value for '" + key + "'");
    const auto full = section + "." + key;
    if (t.values.count(full)) throw InputError(where + "duplicate key '" + full + "'");
    t.values[full] = value;
  }
  return t;
}

ConfigTable ConfigTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void ConfigTable::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InputError("override '" + assignment + "' is not key=value");
  const std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  if (key.find('.') == std::string::npos) throw InputError("override key '" + key + "' needs a section");
  // Bare words are accepted for path keys on the command line.
  if (key.rfind("paths.", 0) == 0 && (value.empty() || value.front() != '"')) {
    value = ojson(value).dump();
  }
  values[key] = value;
}

std::string RunConfig::echo() const {
  ojson j = ojson::object();
  for (const auto& b : all_bindings())
    if (b.get) j[b.key] = b.get(*this);
  j["categories"] = pipeline.categories.names;
  return j.dump();
}

RunConfig run_config_from(const ConfigTable& table, const std::string& base_dir) {
  RunConfig c;
  const auto& bs = all_bindings();
  for (const auto& [key, raw] : table.values) {
    auto it = std::find_if(bs.begin(), bs.end(), [&](const Binding& b) { return b.key == key; });
    if (it == bs.end()) throw InputError("unknown config key '" + key + "'");
    it->set(c, raw);
  }
  auto& p = c.paths;
  for (auto* s : {&p.categories, &p.corpus, &p.corpus_stats, &p.pvp_checkpoint, &p.pvp_loss,
                  &p.transfer_checkpoint, &p.transfer_loss, &p.report, &p.ablation, &p.gradcheck,
                  &p.eval_images})
    *s = resolve(base_dir, *s);
  if (!p.categories.empty()) c.pipeline.categories = read_categories(p.categories);
  if (!(c.gradcheck_backward_scale > 0.0)) throw ParameterError("gradcheck.backward_scale must be positive");
  if (c.gradcheck_points == 0) throw ParameterError("gradcheck.points must be positive");
  c.pipeline.validate();
  return c;
}

RunConfig resolve_run_config(const std::string& config_path,
                             const std::vector<std::string>& overrides) {
  ConfigTable t;
  std::string base;
  if (!config_path.empty()) {
    t = ConfigTable::load(config_path);
    base = fs::path(config_path).parent_path().string();
  }
  if (const char* env = std::getenv("PVPL_SEED"); env && *env) {
    t.values["run.seed"] = std::to_string(parse_number<std::uint64_t>(env, "PVPL_SEED"));
  }
  for (const auto& o : overrides) t.set(o);
  return run_config_from(t, base);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& b : all_bindings()) out.push_back(b.key);
  return out;
}

}  // namespace pvpl

#include "onn/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <functional>
#include <map>
#include <sstream>

#include "onn/error.hpp"
#include "onn/serialize.hpp"

namespace onn {

namespace {

struct Value {
  enum class Kind { boolean, integer, floating, string, array } kind = Kind::integer;
  bool b = false;
  long long i = 0;
  double d = 0.0;
  std::string s;
  std::vector<Value> items;
  int line = 0;
};

[[noreturn]] void fail_at(int line, const std::string& msg) {
  fail_usage("config line " + std::to_string(line) + ": " + msg);
}

class LineParser {
 public:
  LineParser(const std::string& text, int line) : t_(text), line_(line) {}

  Value value() {
    skip_ws();
    if (pos_ >= t_.size()) fail_at(line_, "missing value");
    const char c = t_[pos_];
    if (c == '"') return string_value();
    if (c == '[') return array_value();
    return scalar_value();
  }

  void expect_end() {
    skip_ws();
    if (pos_ < t_.size() && t_[pos_] != '#') fail_at(line_, "unexpected trailing text");
  }

 private:
  void skip_ws() {
    while (pos_ < t_.size() && (t_[pos_] == ' ' || t_[pos_] == '\t')) ++pos_;
  }

  Value string_value() {
    Value v;
    v.kind = Value::Kind::string;
    v.line = line_;
    ++pos_;
    while (true) {
      if (pos_ >= t_.size()) fail_at(line_, "unterminated string");
      const char c = t_[pos_++];
      if (c == '"') break;
      if (c == '\\') {
        if (pos_ >= t_.size()) fail_at(line_, "unterminated escape");
        const char e = t_[pos_++];
        if (e == '"' || e == '\\') {
          v.s.push_back(e);
        } else if (e == 'n') {
          v.s.push_back('\n');
        } else if (e == 't') {
          v.s.push_back('\t');
        } else {
          fail_at(line_, std::string("unsupported escape \\") + e);
        }
      } else {
        v.s.push_back(c);
      }
    }
    return v;
  }

  Value array_value() {
    Value v;
    v.kind = Value::Kind::array;
    v.line = line_;
    ++pos_;
    skip_ws();
    if (pos_ < t_.size() && t_[pos_] == ']') {
      ++pos_;
      return v;
    }
    while (true) {
      Value item = value();
      if (item.kind == Value::Kind::array) fail_at(line_, "nested arrays are not supported");
      v.items.push_back(std::move(item));
      skip_ws();
      if (pos_ >= t_.size()) fail_at(line_, "unterminated array");
      if (t_[pos_] == ',') {
        ++pos_;
        skip_ws();
        if (pos_ < t_.size() && t_[pos_] == ']') {
          ++pos_;
          return v;
        }
        continue;
      }
      if (t_[pos_] == ']') {
        ++pos_;
        return v;
      }
      fail_at(line_, "expected ',' or ']' in array");
    }
  }

  Value scalar_value() {
    const std::size_t start = pos_;
    while (pos_ < t_.size() && t_[pos_] != ',' && t_[pos_] != ']' && t_[pos_] != '#' &&
           !std::isspace(static_cast<unsigned char>(t_[pos_]))) {
      ++pos_;
    }
    std::string tok = t_.substr(start, pos_ - start);
    Value v;
    v.line = line_;
    if (tok == "true" || tok == "false") {
      v.kind = Value::Kind::boolean;
      v.b = tok == "true";
      return v;
    }
    std::string digits;
    for (char c : tok) {
      if (c != '_') digits.push_back(c);
    }
    if (!digits.empty() && digits.front() == '+') digits.erase(0, 1);
    const char* b = digits.data();
    const char* e = b + digits.size();
    const bool is_float = digits.find_first_of(".eE") != std::string::npos || digits == "inf" ||
                          digits == "-inf" || digits == "nan";
    if (!is_float) {
      auto [p, ec] = std::from_chars(b, e, v.i);
      if (ec == std::errc() && p == e && !digits.empty()) {
        v.kind = Value::Kind::integer;
        return v;
      }
    } else {
      auto [p, ec] = std::from_chars(b, e, v.d);
      if (ec == std::errc() && p == e) {
        v.kind = Value::Kind::floating;
        return v;
      }
    }
    fail_at(line_, "cannot parse value '" + tok + "' (strings need double quotes)");
  }

  const std::string& t_;
  std::size_t pos_ = 0;
  int line_;
};

bool valid_name(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  }
  return true;
}

std::string trim(const std::string& s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::map<std::string, std::map<std::string, Value>> parse_document(const std::string& text) {
  std::map<std::string, std::map<std::string, Value>> doc;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string l = trim(raw);
    if (l.empty() || l.front() == '#') continue;
    if (l.front() == '[') {
      const auto close = l.find(']');
      if (close == std::string::npos) fail_at(line, "unterminated section header");
      const std::string rest = trim(l.substr(close + 1));
      if (!rest.empty() && rest.front() != '#') fail_at(line, "unexpected text after section header");
      section = trim(l.substr(1, close - 1));
      if (!valid_name(section)) fail_at(line, "invalid section name '" + section + "'");
      if (doc.count(section)) fail_at(line, "duplicate section [" + section + "]");
      doc[section];
      continue;
    }
    const auto eq = l.find('=');
    if (eq == std::string::npos) fail_at(line, "expected key = value");
    const std::string key = trim(l.substr(0, eq));
    if (!valid_name(key)) fail_at(line, "invalid key '" + key + "'");
    if (section.empty()) fail_at(line, "key '" + key + "' outside of a section");
    const std::string rhs = l.substr(eq + 1);
    LineParser p(rhs, line);
    Value v = p.value();
    p.expect_end();
    auto& sec = doc[section];
    if (sec.count(key)) fail_at(line, "duplicate key '" + section + "." + key + "'");
    sec.emplace(key, std::move(v));
  }
  return doc;
}

// Typed accessors; `name` is the dotted key used in messages.
long long get_int(const Value& v, const std::string& name) {
  if (v.kind != Value::Kind::integer) fail_at(v.line, name + " must be an integer");
  return v.i;
}

int get_int32(const Value& v, const std::string& name) {
  const long long x = get_int(v, name);
  if (x < -2147483647LL || x > 2147483647LL) fail_at(v.line, name + " is out of range");
  return static_cast<int>(x);
}

std::uint64_t get_seed(const Value& v, const std::string& name) {
  const long long x = get_int(v, name);
  if (x < 0) fail_at(v.line, name + " must be >= 0");
  return static_cast<std::uint64_t>(x);
}

double get_double(const Value& v, const std::string& name) {
  if (v.kind == Value::Kind::integer) return static_cast<double>(v.i);
  if (v.kind != Value::Kind::floating) fail_at(v.line, name + " must be a number");
  return v.d;
}

std::string get_string(const Value& v, const std::string& name) {
  if (v.kind != Value::Kind::string) fail_at(v.line, name + " must be a quoted string");
  return v.s;
}

std::vector<int> get_int_list(const Value& v, const std::string& name) {
  if (v.kind != Value::Kind::array) fail_at(v.line, name + " must be an array of integers");
  std::vector<int> out;
  for (const auto& item : v.items) out.push_back(get_int32(item, name));
  return out;
}

std::vector<std::string> get_string_list(const Value& v, const std::string& name) {
  if (v.kind != Value::Kind::array) fail_at(v.line, name + " must be an array of strings");
  std::vector<std::string> out;
  for (const auto& item : v.items) out.push_back(get_string(item, name));
  return out;
}

struct ArchFields {
  int inputs = 1;
  std::vector<int> hidden;
  std::vector<std::string> resample;
  int outputs = 1;
  int kernel = 3;
};

ArchFields arch_fields(const Architecture& a) {
  ArchFields f;
  f.inputs = a.layers.front().neurons;
  f.outputs = a.layers.back().neurons;
  for (std::size_t l = 1; l + 1 < a.layers.size(); ++l) {
    f.hidden.push_back(a.layers[l].neurons);
    f.resample.push_back(to_string(a.layers[l].resample));
  }
  f.kernel = a.kernel_rows;
  return f;
}

Architecture arch_from_fields(const ArchFields& f) {
  if (f.hidden.size() != f.resample.size()) {
    fail_usage("architecture.hidden and architecture.resample need the same length");
  }
  Architecture a;
  a.layers.push_back({f.inputs, Resample::none, false});
  for (std::size_t j = 0; j < f.hidden.size(); ++j) {
    a.layers.push_back({f.hidden[j], resample_from_string(f.resample[j]), true});
  }
  a.layers.push_back({f.outputs, Resample::none, false});
  a.kernel_rows = f.kernel;
  a.kernel_cols = f.kernel;
  return a;
}

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  std::string s(buf, p);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

std::string fmt_string(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out.push_back('\\');
      out.push_back(c);
    } else if (c == '\n') {
      out += "\\n";
    } else if (c == '\t') {
      out += "\\t";
    } else {
      out.push_back(c);
    }
  }
  return out + "\"";
}

template <class T, class F>
std::string fmt_list(const std::vector<T>& v, F&& f) {
  std::string out = "[";
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (j) out += ", ";
    out += f(v[j]);
  }
  return out + "]";
}

}  // namespace

void RunConfig::validate() const {
  experiment.validate();
  if (corpus.empty()) fail_usage("corpus.source must not be empty");
  if (image_size < 1) fail_usage("corpus.size must be >= 1");
  if (image_size % experiment.arch.spatial_divisor() != 0) {
    fail_usage("corpus.size must be divisible by the architecture's resampling factor");
  }
  if (synthetic_count < 0) fail_usage("corpus.synthetic_count must be >= 0");
  if (!(experiment.task.noise_p >= 0.0 && experiment.task.noise_p <= 1.0)) {
    fail_usage("task.noise_p must lie in [0, 1]");
  }
  if (!(experiment.task.train_fraction > 0.0 && experiment.task.train_fraction <= 1.0)) {
    fail_usage("task.train_fraction must lie in (0, 1]");
  }
  if (experiment.task.kind != TaskKind::denoise && experiment.task.pairs_per_fold < 1) {
    fail_usage("task.pairs_per_fold must be >= 1");
  }
  if (output_dir.empty()) fail_usage("output.dir must not be empty");
  constexpr std::uint64_t kMaxSeed = 9223372036854775807ULL;
  if (experiment.seed > kMaxSeed || synthetic_seed > kMaxSeed) fail_usage("seeds must be < 2^63");
}

int RunConfig::effective_synthetic_count() const {
  if (synthetic_count > 0) return synthetic_count;
  const auto& t = experiment.task;
  switch (t.kind) {
    case TaskKind::denoise: return std::max(10, 10 * experiment.folds);
    case TaskKind::synth: return t.pairs_per_fold * experiment.folds;
    case TaskKind::transform: return 2 * t.pairs_per_fold * experiment.folds;
  }
  return 0;
}

RunConfig default_run_config(TaskKind kind) {
  RunConfig c;
  c.experiment.task = default_task_spec(kind);
  return c;
}

RunConfig parse_config(const std::string& text) {
  auto doc = parse_document(text);

  TaskKind kind = TaskKind::transform;
  if (auto s = doc.find("task"); s != doc.end()) {
    if (auto k = s->second.find("kind"); k != s->second.end()) {
      kind = task_from_string(get_string(k->second, "task.kind"));
    }
  }
  RunConfig cfg = default_run_config(kind);
  ExperimentConfig& e = cfg.experiment;
  ArchFields arch = arch_fields(e.arch);
  std::vector<int> pools = e.task.sublibrary.pools_used;
  std::vector<int> acts = e.task.sublibrary.acts_used;
  std::vector<int> nodals = e.task.sublibrary.nodals_used;

  using Setter = std::function<void(const Value&, const std::string&)>;
  const std::map<std::string, std::map<std::string, Setter>> schema = {
      {"task",
       {{"kind", [](const Value&, const std::string&) {}},
        {"folds", [&](const Value& v, const std::string& n) { e.folds = get_int32(v, n); }},
        {"pairs_per_fold", [&](const Value& v, const std::string& n) { e.task.pairs_per_fold = get_int32(v, n); }},
        {"noise_p", [&](const Value& v, const std::string& n) { e.task.noise_p = get_double(v, n); }},
        {"train_fraction", [&](const Value& v, const std::string& n) { e.task.train_fraction = get_double(v, n); }},
        {"seed", [&](const Value& v, const std::string& n) { e.seed = get_seed(v, n); }}}},
      {"corpus",
       {{"source", [&](const Value& v, const std::string& n) { cfg.corpus = get_string(v, n); }},
        {"size", [&](const Value& v, const std::string& n) { cfg.image_size = get_int32(v, n); }},
        {"synthetic_count", [&](const Value& v, const std::string& n) { cfg.synthetic_count = get_int32(v, n); }},
        {"synthetic_seed", [&](const Value& v, const std::string& n) { cfg.synthetic_seed = get_seed(v, n); }}}},
      {"operators",
       {{"pools", [&](const Value& v, const std::string& n) { pools = get_int_list(v, n); }},
        {"acts", [&](const Value& v, const std::string& n) { acts = get_int_list(v, n); }},
        {"nodals", [&](const Value& v, const std::string& n) { nodals = get_int_list(v, n); }},
        {"k_nodal", [&](const Value& v, const std::string& n) { e.constants.k_nodal = get_double(v, n); }},
        {"k_chirp", [&](const Value& v, const std::string& n) { e.constants.k_chirp = get_double(v, n); }},
        {"cut", [&](const Value& v, const std::string& n) { e.constants.cut = get_double(v, n); }},
        {"sinc_guard", [&](const Value& v, const std::string& n) { e.constants.sinc_guard = get_double(v, n); }},
        {"arg_clip", [&](const Value& v, const std::string& n) { e.constants.arg_clip = get_double(v, n); }}}},
      {"architecture",
       {{"inputs", [&](const Value& v, const std::string& n) { arch.inputs = get_int32(v, n); }},
        {"hidden", [&](const Value& v, const std::string& n) { arch.hidden = get_int_list(v, n); }},
        {"resample", [&](const Value& v, const std::string& n) { arch.resample = get_string_list(v, n); }},
        {"outputs", [&](const Value& v, const std::string& n) { arch.outputs = get_int32(v, n); }},
        {"kernel", [&](const Value& v, const std::string& n) { arch.kernel = get_int32(v, n); }}}},
      {"spm",
       {{"iterations_per_session", [&](const Value& v, const std::string& n) { e.spm.iterations_per_session = get_int32(v, n); }},
        {"sessions", [&](const Value& v, const std::string& n) { e.spm.sessions = get_int32(v, n); }},
        {"warmup_min_samples", [&](const Value& v, const std::string& n) { e.spm.warmup_min_samples = get_int32(v, n); }}}},
      {"train",
       {{"iterations", [&](const Value& v, const std::string& n) { e.train.iterations = get_int32(v, n); }},
        {"runs", [&](const Value& v, const std::string& n) { e.runs = get_int32(v, n); }},
        {"lr0", [&](const Value& v, const std::string& n) { e.train.lr0 = get_double(v, n); }},
        {"alpha", [&](const Value& v, const std::string& n) { e.train.alpha = get_double(v, n); }},
        {"beta", [&](const Value& v, const std::string& n) { e.train.beta = get_double(v, n); }},
        {"lr_max", [&](const Value& v, const std::string& n) { e.train.lr_max = get_double(v, n); }},
        {"lr_min", [&](const Value& v, const std::string& n) { e.train.lr_min = get_double(v, n); }},
        {"batch", [&](const Value& v, const std::string& n) { e.train.batch = get_int32(v, n); }},
        {"weight_range", [&](const Value& v, const std::string& n) { e.weight_range = get_double(v, n); }}}},
      {"output",
       {{"dir", [&](const Value& v, const std::string& n) { cfg.output_dir = get_string(v, n); }}}},
  };

  for (const auto& [section, keys] : doc) {
    const auto s = schema.find(section);
    if (s == schema.end()) fail_usage("unknown config section [" + section + "]");
    for (const auto& [key, value] : keys) {
      const auto k = s->second.find(key);
      if (k == s->second.end()) {
        fail_at(value.line, "unknown key '" + section + "." + key + "'");
      }
      k->second(value, section + "." + key);
    }
  }

  e.task.sublibrary = make_sublibrary(pools, acts, nodals);
  e.arch = arch_from_fields(arch);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail_usage("config file not found: " + path.string());
  return parse_config(read_file(path));
}

std::string serialize_config(const RunConfig& cfg) {
  const ExperimentConfig& e = cfg.experiment;
  const ArchFields a = arch_fields(e.arch);
  auto ints = [](const std::vector<int>& v) {
    return fmt_list(v, [](int x) { return std::to_string(x); });
  };
  std::ostringstream os;
  os << "[task]\n"
     << "kind = " << fmt_string(to_string(e.task.kind)) << '\n'
     << "folds = " << e.folds << '\n'
     << "pairs_per_fold = " << e.task.pairs_per_fold << '\n'
     << "noise_p = " << fmt_double(e.task.noise_p) << '\n'
     << "train_fraction = " << fmt_double(e.task.train_fraction) << '\n'
     << "seed = " << e.seed << "\n\n"
     << "[corpus]\n"
     << "source = " << fmt_string(cfg.corpus) << '\n'
     << "size = " << cfg.image_size << '\n'
     << "synthetic_count = " << cfg.synthetic_count << '\n'
     << "synthetic_seed = " << cfg.synthetic_seed << "\n\n"
     << "[operators]\n"
     << "pools = " << ints(e.task.sublibrary.pools_used) << '\n'
     << "acts = " << ints(e.task.sublibrary.acts_used) << '\n'
     << "nodals = " << ints(e.task.sublibrary.nodals_used) << '\n'
     << "k_nodal = " << fmt_double(e.constants.k_nodal) << '\n'
     << "k_chirp = " << fmt_double(e.constants.k_chirp) << '\n'
     << "cut = " << fmt_double(e.constants.cut) << '\n'
     << "sinc_guard = " << fmt_double(e.constants.sinc_guard) << '\n'
     << "arg_clip = " << fmt_double(e.constants.arg_clip) << "\n\n"
     << "[architecture]\n"
     << "inputs = " << a.inputs << '\n'
     << "hidden = " << ints(a.hidden) << '\n'
     << "resample = " << fmt_list(a.resample, fmt_string) << '\n'
     << "outputs = " << a.outputs << '\n'
     << "kernel = " << a.kernel << "\n\n"
     << "[spm]\n"
     << "iterations_per_session = " << e.spm.iterations_per_session << '\n'
     << "sessions = " << e.spm.sessions << '\n'
     << "warmup_min_samples = " << e.spm.warmup_min_samples << "\n\n"
     << "[train]\n"
     << "iterations = " << e.train.iterations << '\n'
     << "runs = " << e.runs << '\n'
     << "lr0 = " << fmt_double(e.train.lr0) << '\n'
     << "alpha = " << fmt_double(e.train.alpha) << '\n'
     << "beta = " << fmt_double(e.train.beta) << '\n'
     << "lr_max = " << fmt_double(e.train.lr_max) << '\n'
     << "lr_min = " << fmt_double(e.train.lr_min) << '\n'
     << "batch = " << e.train.batch << '\n'
     << "weight_range = " << fmt_double(e.weight_range) << "\n\n"
     << "[output]\n"
     << "dir = " << fmt_string(cfg.output_dir) << '\n';
  return os.str();
}

void apply_env_overrides(RunConfig& cfg) {
  const char* s = std::getenv("ONN_SEED");
  if (!s || !*s) return;
  std::uint64_t v = 0;
  const char* e = s + std::char_traits<char>::length(s);
  auto [p, ec] = std::from_chars(s, e, v);
  if (ec != std::errc() || p != e) fail_usage(std::string("ONN_SEED is not an unsigned integer: ") + s);
  cfg.experiment.seed = v;
}

Corpus load_run_corpus(const RunConfig& cfg) {
  if (cfg.corpus == "synthetic") {
    return synthetic_corpus(cfg.effective_synthetic_count(), cfg.image_size, cfg.synthetic_seed);
  }
  return load_corpus(cfg.corpus, cfg.image_size);
}

}  // namespace onn

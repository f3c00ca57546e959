#include "onn/serialize.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <system_error>

#include "onn/error.hpp"

namespace onn {

namespace fs = std::filesystem;

namespace {

// Runs a decoder, turning JSON type/key errors into data errors.
template <class F>
auto decode(const char* what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    fail_data(std::string("malformed ") + what + ": " + e.what());
  }
}

Json kernel_to_json(const Kernel& k) {
  Json rows = Json::array();
  for (int r = 0; r < k.rows; ++r) {
    Json row = Json::array();
    for (int c = 0; c < k.cols; ++c) row.push_back(k.at(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Kernel kernel_from_json(const Json& j) {
  const int rows = static_cast<int>(j.size());
  if (rows == 0) fail_data("empty kernel");
  const int cols = static_cast<int>(j.at(0).size());
  Kernel k(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const Json& row = j.at(static_cast<std::size_t>(r));
    if (static_cast<int>(row.size()) != cols) fail_data("ragged kernel rows");
    for (int c = 0; c < cols; ++c) k.at(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  return k;
}

Json kernels_to_json(const std::vector<std::vector<Kernel>>& kernels) {
  Json out = Json::array();
  for (const auto& layer : kernels) {
    Json l = Json::array();
    for (const auto& k : layer) l.push_back(kernel_to_json(k));
    out.push_back(std::move(l));
  }
  return out;
}

std::vector<std::vector<Kernel>> kernels_from_json(const Json& j) {
  std::vector<std::vector<Kernel>> out;
  for (const auto& layer : j) {
    std::vector<Kernel> l;
    for (const auto& k : layer) l.push_back(kernel_from_json(k));
    out.push_back(std::move(l));
  }
  return out;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail_data("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) fail_data("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail_data("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_data("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail_data("invalid JSON in " + path.string() + ": " + e.what());
  }
}

std::string dump_json(const Json& j) { return j.dump(2) + "\n"; }

Json number_or_sentinel(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from_sentinel(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto& s = j.get_ref<const std::string&>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  fail_data("expected a number or inf/-inf/nan, got " + j.dump());
}

Json to_json(const OperatorConstants& c) {
  return {{"k_nodal", c.k_nodal},
          {"k_chirp", c.k_chirp},
          {"cut", c.cut},
          {"sinc_guard", c.sinc_guard},
          {"arg_clip", c.arg_clip}};
}

OperatorConstants constants_from_json(const Json& j) {
  return decode("operator constants", [&] {
    OperatorConstants c;
    c.k_nodal = j.at("k_nodal").get<double>();
    c.k_chirp = j.at("k_chirp").get<double>();
    c.cut = j.at("cut").get<double>();
    c.sinc_guard = j.at("sinc_guard").get<double>();
    c.arg_clip = j.at("arg_clip").get<double>();
    c.validate();
    return c;
  });
}

Json to_json(const OperatorSubLibrary& lib) {
  return {{"pools", lib.pools_used},
          {"acts", lib.acts_used},
          {"nodals", lib.nodals_used},
          {"sets", lib.sets}};
}

OperatorSubLibrary sublibrary_from_json(const Json& j) {
  return decode("sub-library", [&] {
    OperatorSubLibrary lib = make_sublibrary(j.at("pools").get<std::vector<int>>(),
                                             j.at("acts").get<std::vector<int>>(),
                                             j.at("nodals").get<std::vector<int>>());
    if (j.contains("sets") && j.at("sets").get<std::vector<int>>() != lib.sets) {
      fail_data("sub-library sets do not match its operator ids");
    }
    return lib;
  });
}

Json to_json(const Architecture& arch) {
  Json layers = Json::array();
  for (const auto& l : arch.layers) {
    layers.push_back(
        {{"neurons", l.neurons}, {"resample", to_string(l.resample)}, {"assignable", l.assignable}});
  }
  return {{"layers", layers}, {"kernel_rows", arch.kernel_rows}, {"kernel_cols", arch.kernel_cols}};
}

Architecture architecture_from_json(const Json& j) {
  return decode("architecture", [&] {
    Architecture a;
    for (const auto& l : j.at("layers")) {
      a.layers.push_back({l.at("neurons").get<int>(),
                          resample_from_string(l.at("resample").get<std::string>()),
                          l.at("assignable").get<bool>()});
    }
    a.kernel_rows = j.at("kernel_rows").get<int>();
    a.kernel_cols = j.at("kernel_cols").get<int>();
    a.validate();
    return a;
  });
}

Json to_json(const SpmConfig& cfg) {
  return {{"iterations_per_session", cfg.iterations_per_session},
          {"sessions", cfg.sessions},
          {"warmup_min_samples", cfg.warmup_min_samples}};
}

SpmConfig spm_config_from_json(const Json& j) {
  return decode("SPM config", [&] {
    SpmConfig c;
    c.iterations_per_session = j.at("iterations_per_session").get<int>();
    c.sessions = j.at("sessions").get<int>();
    c.warmup_min_samples = j.at("warmup_min_samples").get<int>();
    return c;
  });
}

Json to_json(const TrainConfig& cfg) {
  return {{"iterations", cfg.iterations}, {"lr0", cfg.lr0},       {"alpha", cfg.alpha},
          {"beta", cfg.beta},             {"lr_max", cfg.lr_max}, {"lr_min", cfg.lr_min},
          {"batch", cfg.batch},           {"seed", cfg.seed}};
}

TrainConfig train_config_from_json(const Json& j) {
  return decode("training config", [&] {
    TrainConfig c;
    c.iterations = j.at("iterations").get<int>();
    c.lr0 = j.at("lr0").get<double>();
    c.alpha = j.at("alpha").get<double>();
    c.beta = j.at("beta").get<double>();
    c.lr_max = j.at("lr_max").get<double>();
    c.lr_min = j.at("lr_min").get<double>();
    c.batch = j.at("batch").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
  });
}

Json to_json(const OnnModel& model) {
  return {{"version", kCheckpointVersion},
          {"architecture", to_json(model.arch)},
          {"constants", to_json(model.constants)},
          {"output_set", model.output_set},
          {"assignments", model.assignments},
          {"kernels", kernels_to_json(model.params.kernels)},
          {"biases", model.params.biases}};
}

OnnModel model_from_json(const Json& j) {
  return decode("checkpoint", [&] {
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      fail_data("unsupported checkpoint version " + std::to_string(version));
    }
    OnnModel m;
    m.arch = architecture_from_json(j.at("architecture"));
    m.constants = constants_from_json(j.at("constants"));
    m.output_set = j.at("output_set").get<int>();
    m.assignments = j.at("assignments").get<std::vector<std::vector<int>>>();
    m.params.kernels = kernels_from_json(j.at("kernels"));
    m.params.biases = j.at("biases").get<std::vector<std::vector<double>>>();
    m.validate();
    return m;
  });
}

void save_model(const fs::path& path, const OnnModel& model) {
  write_file_atomic(path, dump_json(to_json(model)));
}

OnnModel load_model(const fs::path& path) { return model_from_json(read_json(path)); }

Json to_json(const HealthLedger& ledger) {
  Json layers = Json::object();
  for (const auto& [l, cells] : ledger.layers) {
    Json sets = Json::object();
    for (int s : ledger.sublibrary.sets) {
      const HfCell& c = cells[static_cast<std::size_t>(s)];
      const auto mean = c.mean();
      sets[std::to_string(s)] = {
          {"count", c.count}, {"sum", c.sum}, {"mean_hf", mean ? Json(*mean) : Json(nullptr)}};
    }
    layers[std::to_string(l)] = std::move(sets);
  }
  Json warm = Json::object();
  for (const auto& [l, w] : ledger.warm) warm[std::to_string(l)] = w;
  return {{"version", kLedgerVersion},
          {"seed", ledger.seed},
          {"spm", to_json(ledger.config)},
          {"sublibrary", to_json(ledger.sublibrary)},
          {"sessions_completed", ledger.sessions_completed},
          {"sessions_diverged", ledger.sessions_diverged},
          {"samples_skipped", ledger.samples_skipped},
          {"warm", warm},
          {"layers", layers}};
}

HealthLedger ledger_from_json(const Json& j) {
  return decode("health-factor ledger", [&] {
    const int version = j.at("version").get<int>();
    if (version != kLedgerVersion) fail_data("unsupported ledger version " + std::to_string(version));
    std::vector<int> hidden;
    for (const auto& [key, _] : j.at("layers").items()) hidden.push_back(std::stoi(key));
    HealthLedger ledger(sublibrary_from_json(j.at("sublibrary")), hidden);
    ledger.seed = j.at("seed").get<std::uint64_t>();
    ledger.config = spm_config_from_json(j.at("spm"));
    ledger.sessions_completed = j.at("sessions_completed").get<int>();
    ledger.sessions_diverged = j.at("sessions_diverged").get<int>();
    ledger.samples_skipped = j.at("samples_skipped").get<long>();
    for (const auto& [key, w] : j.at("warm").items()) ledger.warm[std::stoi(key)] = w.get<bool>();
    for (const auto& [key, sets] : j.at("layers").items()) {
      auto& cells = ledger.layers.at(std::stoi(key));
      for (const auto& [skey, cell] : sets.items()) {
        const int s = std::stoi(skey);
        if (!ledger.sublibrary.contains(s)) fail_data("ledger set " + skey + " outside its sub-library");
        cells[static_cast<std::size_t>(s)] = {cell.at("count").get<long>(), cell.at("sum").get<double>()};
      }
    }
    return ledger;
  });
}

void save_ledger(const fs::path& path, const HealthLedger& ledger) {
  write_file_atomic(path, dump_json(to_json(ledger)));
}

HealthLedger load_ledger(const fs::path& path) { return ledger_from_json(read_json(path)); }

void write_ledger_csv(std::ostream& os, const HealthLedger& ledger) {
  os << "layer,theta,count,hf\n";
  os << std::setprecision(17);
  for (const auto& [l, cells] : ledger.layers) {
    for (int s : ledger.sublibrary.sets) {
      const HfCell& c = cells[static_cast<std::size_t>(s)];
      os << l << ',' << s << ',' << c.count << ',';
      if (const auto m = c.mean()) os << *m;
      os << '\n';
    }
  }
}

Json to_json(const std::vector<SessionRecord>& sessions) {
  Json out = Json::array();
  for (const auto& s : sessions) {
    Json samples = Json::array();
    for (const auto& h : s.samples) {
      samples.push_back(
          {{"layer", h.layer}, {"neuron", h.neuron}, {"set", h.set}, {"hf", h.hf}});
    }
    out.push_back({{"session", s.session},
                   {"diverged", s.diverged},
                   {"assignments", s.assignments},
                   {"before", kernels_to_json(s.before)},
                   {"after", kernels_to_json(s.after)},
                   {"samples", samples}});
  }
  return out;
}

std::vector<SessionRecord> sessions_from_json(const Json& j) {
  return decode("session snapshots", [&] {
    std::vector<SessionRecord> out;
    for (const auto& s : j) {
      SessionRecord r;
      r.session = s.at("session").get<int>();
      r.diverged = s.at("diverged").get<bool>();
      r.assignments = s.at("assignments").get<std::vector<std::vector<int>>>();
      r.before = kernels_from_json(s.at("before"));
      r.after = kernels_from_json(s.at("after"));
      for (const auto& h : s.at("samples")) {
        r.samples.push_back({r.session, h.at("layer").get<int>(), h.at("neuron").get<int>(),
                             h.at("set").get<int>(), h.at("hf").get<double>()});
      }
      out.push_back(std::move(r));
    }
    return out;
  });
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    fail_data("SHA-256 computation failed");
  }
  std::ostringstream ss;
  ss << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) ss << std::setw(2) << static_cast<int>(digest[i]);
  return ss.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

}  // namespace onn

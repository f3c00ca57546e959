#pragma once

// JSON/CSV persistence: model checkpoints, health-factor ledgers, SPM weight
// snapshots and atomic file writes. Doubles are written with round-trip
// precision, so save/load is value-exact.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "onn/model.hpp"
#include "onn/spm.hpp"

namespace onn {

using Json = nlohmann::json;

inline constexpr int kCheckpointVersion = 1;
inline constexpr int kLedgerVersion = 1;

// Writes to a sibling temp file, then renames over the destination.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);
// Two-space indented JSON with a trailing newline.
std::string dump_json(const Json& j);

// Finite values as numbers; +/-inf as the strings "inf" / "-inf"; NaN as "nan".
Json number_or_sentinel(double v);
double number_from_sentinel(const Json& j);

Json to_json(const OperatorConstants& c);
OperatorConstants constants_from_json(const Json& j);
Json to_json(const OperatorSubLibrary& lib);
OperatorSubLibrary sublibrary_from_json(const Json& j);
Json to_json(const Architecture& arch);
Architecture architecture_from_json(const Json& j);
Json to_json(const SpmConfig& cfg);
SpmConfig spm_config_from_json(const Json& j);
Json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const Json& j);

// Checkpoint: {version, architecture, constants, output_set, assignments,
// kernels[layer][k*N_{l-1}+i] as row-major nested arrays, biases}.
Json to_json(const OnnModel& model);
OnnModel model_from_json(const Json& j);
void save_model(const std::filesystem::path& path, const OnnModel& model);
OnnModel load_model(const std::filesystem::path& path);

// Ledger: {version, seed, spm, sublibrary, sessions_completed, ...,
// layers: {"<l>": {"<theta>": {count, sum, mean_hf}}}}.
Json to_json(const HealthLedger& ledger);
HealthLedger ledger_from_json(const Json& j);
void save_ledger(const std::filesystem::path& path, const HealthLedger& ledger);
HealthLedger load_ledger(const std::filesystem::path& path);
// Header `layer,theta,count,hf`; hf empty for unsampled sets.
void write_ledger_csv(std::ostream& os, const HealthLedger& ledger);

// Per-session weight snapshots and samples for offline health-factor replay.
Json to_json(const std::vector<SessionRecord>& sessions);
std::vector<SessionRecord> sessions_from_json(const Json& j);

// SHA-256 of a file's bytes as lowercase hex.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_hex(const std::string& bytes);

}  // namespace onn

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "segkit/ensemble.hpp"

namespace segkit {

namespace fs = std::filesystem;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// TSR1: "TSR1", rank byte (3), little-endian u32 H W C, then H·W·C little-endian f32.
std::vector<std::uint8_t> tsr_encode(const Tensor<float>& t);
// Decodes one record starting at `offset`; `offset` is advanced past it.
Tensor<float> tsr_decode(const std::vector<std::uint8_t>& bytes, std::size_t& offset);
void tsr_write(const Tensor<float>& t, const fs::path& path);
Tensor<float> tsr_read(const fs::path& path);

// Binary PGM (P5, maxval 255); each byte is a class index.
void pgm_write(const LabelMap& labels, const fs::path& path, int num_classes = 256);
LabelMap pgm_read(const fs::path& path, int num_classes = 256);

std::vector<std::uint8_t> read_bytes(const fs::path& path);
void write_bytes(const std::vector<std::uint8_t>& bytes, const fs::path& path);
std::string read_text(const fs::path& path);
void write_text(const std::string& text, const fs::path& path);

/// Weights are a concatenation of TSR1 records (parameters, then buffers as 1×1×len)
/// plus `<path>.json` listing name, kind, byte offset and shape of every record.
/// `header_json` is stored under "model" in the index.
void save_registry(const ParamRegistry<float>& reg, const fs::path& path,
                   const std::string& header_json = "{}");
/// Loads values into a registry with the same names and shapes; returns the "model" header.
std::string load_registry(ParamRegistry<float>& reg, const fs::path& path);
fs::path index_path(const fs::path& weights);

void save_network(Network<float>& net, const fs::path& path);
Network<float> load_network(const fs::path& path);

void save_stacking(StackingModel<float>& model, const fs::path& path);
StackingModel<float> load_stacking(const fs::path& path);

std::string topology_to_json(const TopologySpec& spec);
TopologySpec topology_from_json(const std::string& text);

std::string ensemble_to_json(const EnsembleSpec& spec);
EnsembleSpec ensemble_from_json(const std::string& text);

std::string thresholds_to_json(const ClassThresholds& t);
ClassThresholds thresholds_from_json(const std::string& text);

/// Training run configuration. "topology" may be a named id or a full spec.
struct RunConfig {
  TopologySpec topology = named_topology("UMD", 8, 12);
  TrainConfig train;
  int patch = 256;
  int stride = 192;
};
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& config);

struct ManifestRecord {
  std::string id;
  int patient_id = 0;
  std::string image_path;
  std::string mask_path;
  std::optional<std::string> split;
};

struct Manifest {
  int num_classes = 12;
  std::vector<ManifestRecord> records;
  fs::path base_dir;  // relative paths resolve against this
};

Manifest manifest_from_json(const std::string& text, const fs::path& base_dir = {});
std::string manifest_to_json(const Manifest& m);
Manifest load_manifest(const fs::path& path);

/// Reads every record; checks that images have two channels, masks match in size
/// and class indices are below num_classes.
Dataset load_dataset(const Manifest& manifest);

/// Writes images/<id>.tsr, masks/<id>.pgm and manifest.json under `dir`.
Manifest write_dataset(const Dataset& ds, const fs::path& dir);

std::string fold_plan_to_json(const FoldPlan& plan, std::uint64_t seed);
FoldPlan fold_plan_from_json(const std::string& text);

void write_history_csv(const std::vector<EpochRecord>& history, const fs::path& path);

}  // namespace segkit

#include "segkit/io.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace segkit {

using json = nlohmann::json;

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

json parse(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("invalid ") + what + " JSON: " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("field '") + key + "': " + e.what());
  }
}

template <typename T>
T required(const json& j, const char* key, const char* what) {
  if (!j.contains(key)) throw FormatError(std::string(what) + " is missing '" + key + "'");
  return field<T>(j, key, T{});
}

}  // namespace

std::vector<std::uint8_t> tsr_encode(const Tensor<float>& t) {
  const Shape s = t.shape();
  if (s.n != 1) throw ShapeError("TSR1 holds a single H×W×C tensor, got " + s.str());
  std::vector<std::uint8_t> out;
  out.reserve(17 + 4 * t.size());
  out.insert(out.end(), {'T', 'S', 'R', '1', 3});
  put_u32(out, static_cast<std::uint32_t>(s.h));
  put_u32(out, static_cast<std::uint32_t>(s.w));
  put_u32(out, static_cast<std::uint32_t>(s.c));
  for (float v : t.raw()) {
    if (!std::isfinite(v)) throw std::domain_error("TSR1 values must be finite");
    put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

Tensor<float> tsr_decode(const std::vector<std::uint8_t>& bytes, std::size_t& offset) {
  if (bytes.size() < offset + 17) throw FormatError("TSR1 header truncated");
  const std::uint8_t* p = bytes.data() + offset;
  if (std::memcmp(p, "TSR1", 4) != 0) throw FormatError("bad magic: not a TSR1 record");
  if (p[4] != 3) throw FormatError("TSR1 rank must be 3, got " + std::to_string(p[4]));
  const std::uint64_t h = get_u32(p + 5), w = get_u32(p + 9), c = get_u32(p + 13);
  if (h == 0 || w == 0 || c == 0) throw FormatError("TSR1 dimensions must be positive");
  const std::uint64_t count = h * w * c;
  if (count > (bytes.size() - offset - 17) / 4)
    throw FormatError("TSR1 payload truncated: expected " + std::to_string(count) + " values");
  Tensor<float> t(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  const std::uint8_t* v = p + 17;
  for (std::size_t i = 0; i < count; ++i) t[i] = std::bit_cast<float>(get_u32(v + 4 * i));
  offset += 17 + 4 * count;
  return t;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::vector<std::uint8_t>& bytes, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  auto b = read_bytes(path);
  return {b.begin(), b.end()};
}

void write_text(const std::string& text, const fs::path& path) {
  write_bytes(std::vector<std::uint8_t>(text.begin(), text.end()), path);
}

void tsr_write(const Tensor<float>& t, const fs::path& path) { write_bytes(tsr_encode(t), path); }

Tensor<float> tsr_read(const fs::path& path) {
  const auto bytes = read_bytes(path);
  std::size_t offset = 0;
  auto t = tsr_decode(bytes, offset);
  if (offset != bytes.size()) throw FormatError(path.string() + ": trailing bytes after TSR1 payload");
  return t;
}

void pgm_write(const LabelMap& labels, const fs::path& path, int num_classes) {
  if (num_classes < 1 || num_classes > 256) throw std::invalid_argument("PGM holds at most 256 classes");
  std::string header = "P5\n" + std::to_string(labels.width) + " " + std::to_string(labels.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (int v : labels.labels) {
    if (v < 0 || v >= num_classes)
      throw std::out_of_range("class index " + std::to_string(v) + " does not fit " +
                              std::to_string(num_classes) + " classes");
    out.push_back(static_cast<std::uint8_t>(v));
  }
  write_bytes(out, path);
}

LabelMap pgm_read(const fs::path& path, int num_classes) {
  const auto bytes = read_bytes(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip_space();
    long v = 0;
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos]) && v < 1L << 30) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start) throw FormatError(path.string() + ": malformed PGM header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError(path.string() + ": not a P5 PGM");
  pos = 2;
  const long w = number(), h = number(), maxval = number();
  if (maxval != 255) throw FormatError(path.string() + ": PGM maxval must be 255, got " + std::to_string(maxval));
  if (w <= 0 || h <= 0) throw FormatError(path.string() + ": PGM dimensions must be positive");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError(path.string() + ": malformed PGM header");
  ++pos;
  if (bytes.size() - pos != static_cast<std::size_t>(w * h))
    throw FormatError(path.string() + ": PGM payload has " + std::to_string(bytes.size() - pos) +
                      " bytes, expected " + std::to_string(w * h));
  LabelMap m(static_cast<int>(h), static_cast<int>(w));
  for (std::size_t i = 0; i < m.size(); ++i) {
    m.labels[i] = bytes[pos + i];
    if (m.labels[i] >= num_classes)
      throw std::out_of_range(path.string() + ": class index " + std::to_string(m.labels[i]) +
                              " exceeds " + std::to_string(num_classes) + " classes");
  }
  return m;
}

fs::path index_path(const fs::path& weights) { return fs::path(weights.string() + ".json"); }

void save_registry(const ParamRegistry<float>& reg, const fs::path& path, const std::string& header_json) {
  std::vector<std::uint8_t> blob;
  json records = json::array();
  auto append = [&](const std::string& name, const char* kind, const Tensor<float>& t) {
    records.push_back({{"name", name},
                       {"kind", kind},
                       {"offset", blob.size()},
                       {"shape", {t.shape().h, t.shape().w, t.shape().c}}});
    const auto rec = tsr_encode(t);
    blob.insert(blob.end(), rec.begin(), rec.end());
  };
  for (const auto& p : reg.params) append(p.name, "param", p.var.value());
  for (const auto& b : reg.buffers) {
    Tensor<float> t(1, 1, static_cast<int>(b.values->size()));
    std::copy(b.values->begin(), b.values->end(), t.raw().begin());
    append(b.name, "buffer", t);
  }
  json index = {{"format", "TSR1"}, {"model", parse(header_json, "model header")}, {"records", records}};
  write_bytes(blob, path);
  write_text(index.dump(2) + "\n", index_path(path));
}

std::string load_registry(ParamRegistry<float>& reg, const fs::path& path) {
  const json index = parse(read_text(index_path(path)), "weights index");
  if (field<std::string>(index, "format", "") != "TSR1") throw FormatError("weights index is not a TSR1 index");
  const auto blob = read_bytes(path);
  std::map<std::string, json> by_name;
  for (const auto& r : index.at("records")) by_name[r.at("name").get<std::string>()] = r;
  const std::size_t expected = reg.params.size() + reg.buffers.size();
  if (by_name.size() != expected)
    throw FormatError("weights hold " + std::to_string(by_name.size()) + " records, model expects " +
                      std::to_string(expected));
  auto fetch = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("weights are missing '" + name + "'");
    std::size_t offset = it->second.at("offset").get<std::size_t>();
    return tsr_decode(blob, offset);
  };
  for (auto& p : reg.params) {
    auto t = fetch(p.name);
    const Shape want = p.var.value().shape();
    if (t.shape() != want)
      throw FormatError("'" + p.name + "' has shape " + t.shape().str() + ", model expects " + want.str());
    Var<float> v = p.var;
    v.mutable_value() = std::move(t);
  }
  for (auto& b : reg.buffers) {
    auto t = fetch(b.name);
    if (t.size() != b.values->size()) throw FormatError("buffer '" + b.name + "' has the wrong length");
    std::copy(t.raw().begin(), t.raw().end(), b.values->begin());
  }
  return index.at("model").dump();
}

namespace {

json topology_json(const TopologySpec& s) {
  return {{"id", s.id},
          {"conv_kind", to_string(s.conv_kind)},
          {"multi_kernel", s.multi_kernel},
          {"attention", s.attention},
          {"ds_v1", s.ds_v1},
          {"ds_v2", s.ds_v2},
          {"ds_v3", s.ds_v3},
          {"m", s.m},
          {"depth", s.depth},
          {"num_classes", s.num_classes},
          {"activation", to_string(s.activation)}};
}

TopologySpec topology_of(const json& j) {
  TopologySpec s;
  s.id = field<std::string>(j, "id", s.id);
  s.conv_kind = parse_conv_kind(field<std::string>(j, "conv_kind", to_string(s.conv_kind)));
  s.multi_kernel = field<bool>(j, "multi_kernel", false);
  s.attention = field<bool>(j, "attention", false);
  s.ds_v1 = field<bool>(j, "ds_v1", false);
  s.ds_v2 = field<bool>(j, "ds_v2", false);
  s.ds_v3 = field<bool>(j, "ds_v3", false);
  s.m = field<int>(j, "m", s.m);
  s.depth = field<int>(j, "depth", s.depth);
  s.num_classes = field<int>(j, "num_classes", s.num_classes);
  s.activation = parse_activation(field<std::string>(j, "activation", to_string(s.activation)));
  s.validate();
  return s;
}

json stacking_json(const StackingConfig& c) {
  return {{"input", to_string(c.input)}, {"merge", to_string(c.merge)}, {"hidden_width", c.hidden_width}};
}

StackingConfig stacking_of(const json& j) {
  StackingConfig c;
  c.input = parse_stack_input(field<std::string>(j, "input", to_string(c.input)));
  c.merge = parse_merge(field<std::string>(j, "merge", to_string(c.merge)));
  c.hidden_width = field<int>(j, "hidden_width", c.hidden_width);
  return c;
}

}  // namespace

void save_network(Network<float>& net, const fs::path& path) {
  json header = {{"kind", "network"}, {"topology", topology_json(net.spec())}};
  save_registry(net.registry(), path, header.dump());
}

Network<float> load_network(const fs::path& path) {
  const json index = parse(read_text(index_path(path)), "weights index");
  const json& model = index.at("model");
  if (field<std::string>(model, "kind", "") != "network") throw FormatError(path.string() + " does not hold a network");
  Network<float> net(topology_of(model.at("topology")), 0);
  load_registry(net.registry(), path);
  return net;
}

void save_stacking(StackingModel<float>& model, const fs::path& path) {
  json header = {{"kind", "stacking"},
                 {"stacking", stacking_json(model.config())},
                 {"members", model.members()},
                 {"member_channels", model.member_channels()},
                 {"num_classes", model.num_classes()}};
  save_registry(model.registry(), path, header.dump());
}

StackingModel<float> load_stacking(const fs::path& path) {
  const json index = parse(read_text(index_path(path)), "weights index");
  const json& h = index.at("model");
  if (field<std::string>(h, "kind", "") != "stacking") throw FormatError(path.string() + " does not hold a stacking model");
  StackingModel<float> model(stacking_of(h.at("stacking")), h.at("member_channels").get<std::vector<int>>(),
                             h.at("num_classes").get<int>(), 0);
  load_registry(model.registry(), path);
  return model;
}

std::string topology_to_json(const TopologySpec& spec) { return topology_json(spec).dump(2) + "\n"; }

TopologySpec topology_from_json(const std::string& text) { return topology_of(parse(text, "topology")); }

std::string ensemble_to_json(const EnsembleSpec& spec) {
  json j = {{"id", spec.id}, {"members", spec.member_ids}};
  switch (spec.mode) {
    case EnsembleMode::arith: j["mode"] = "arith"; break;
    case EnsembleMode::geo: j["mode"] = "geo"; break;
    case EnsembleMode::stacking:
      j["mode"] = "stacking";
      j["stacking"] = stacking_json(spec.stacking);
      break;
  }
  return j.dump(2) + "\n";
}

EnsembleSpec ensemble_from_json(const std::string& text) {
  const json j = parse(text, "ensemble");
  EnsembleSpec spec;
  spec.id = field<std::string>(j, "id", spec.id);
  if (j.contains("members"))
    spec.member_ids = field<std::vector<std::string>>(j, "members", {});
  else
    spec.member_ids = ensemble_roster(spec.id);
  const auto mode = field<std::string>(j, "mode", "arith");
  if (mode == "stacking") {
    spec.mode = EnsembleMode::stacking;
    if (j.contains("stacking")) spec.stacking = stacking_of(j.at("stacking"));
  } else {
    spec = parse_ensemble_mode(spec, mode);
  }
  spec.validate();
  return spec;
}

std::string thresholds_to_json(const ClassThresholds& t) {
  return json{{"num_classes", t.num_classes()}, {"thresholds", t.values}}.dump(2) + "\n";
}

ClassThresholds thresholds_from_json(const std::string& text) {
  const json j = parse(text, "thresholds");
  ClassThresholds t{required<std::vector<double>>(j, "thresholds", "thresholds file")};
  if (j.contains("num_classes") && j.at("num_classes").get<int>() != t.num_classes())
    throw FormatError("thresholds list does not match num_classes");
  for (double v : t.values)
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError("thresholds must lie in [0, 1]");
  return t;
}

RunConfig run_config_from_json(const std::string& text) {
  const json j = parse(text, "run config");
  RunConfig c;
  const int m = field<int>(j, "m", 8);
  const int classes = field<int>(j, "num_classes", 12);
  if (j.contains("topology") && j.at("topology").is_string()) {
    const auto id = j.at("topology").get<std::string>();
    c.topology = named_topology(id, m, classes);
    c.train = table_config(id);
  } else if (j.contains("topology")) {
    c.topology = topology_of(j.at("topology"));
  } else {
    c.topology = named_topology("UMD", m, classes);
    c.train = table_config("UMD");
  }
  auto& t = c.train;
  t.optimizer.kind = parse_optimizer(field<std::string>(j, "optimizer", to_string(t.optimizer.kind)));
  t.optimizer.learning_rate = field<double>(j, "learning_rate", t.optimizer.learning_rate);
  t.epochs = field<int>(j, "epochs", t.epochs);
  t.batch_size = field<int>(j, "batch_size", t.batch_size);
  t.seed = field<std::uint64_t>(j, "seed", t.seed);
  t.augmentation = field<bool>(j, "augmentation", t.augmentation);
  c.patch = field<int>(j, "patch", c.patch);
  c.stride = field<int>(j, "stride", c.stride);
  if (!(t.optimizer.learning_rate > 0.0)) throw FormatError("learning_rate must be positive");
  if (t.epochs < 0) throw FormatError("epochs must be non-negative");
  if (t.batch_size <= 0) throw FormatError("batch_size must be positive");
  if (c.patch < 16 || c.stride <= 0) throw FormatError("patch must be at least 16 and stride positive");
  return c;
}

std::string run_config_to_json(const RunConfig& c) {
  json j = {{"topology", topology_json(c.topology)},
            {"optimizer", to_string(c.train.optimizer.kind)},
            {"learning_rate", c.train.optimizer.learning_rate},
            {"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"seed", c.train.seed},
            {"augmentation", c.train.augmentation},
            {"patch", c.patch},
            {"stride", c.stride}};
  return j.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text, const fs::path& base_dir) {
  const json j = parse(text, "manifest");
  Manifest m;
  m.base_dir = base_dir;
  m.num_classes = field<int>(j, "num_classes", m.num_classes);
  if (m.num_classes < 2 || m.num_classes > 256) throw FormatError("num_classes must be in [2, 256]");
  for (const auto& r : required<json>(j, "records", "manifest")) {
    ManifestRecord rec;
    rec.id = required<std::string>(r, "id", "manifest record");
    rec.patient_id = required<int>(r, "patient_id", "manifest record");
    rec.image_path = required<std::string>(r, "image_path", "manifest record");
    rec.mask_path = required<std::string>(r, "mask_path", "manifest record");
    if (r.contains("split")) rec.split = r.at("split").get<std::string>();
    m.records.push_back(std::move(rec));
  }
  return m;
}

std::string manifest_to_json(const Manifest& m) {
  json records = json::array();
  for (const auto& r : m.records) {
    json j = {{"id", r.id}, {"patient_id", r.patient_id}, {"image_path", r.image_path}, {"mask_path", r.mask_path}};
    if (r.split) j["split"] = *r.split;
    records.push_back(j);
  }
  return json{{"num_classes", m.num_classes}, {"records", records}}.dump(2) + "\n";
}

Manifest load_manifest(const fs::path& path) { return manifest_from_json(read_text(path), path.parent_path()); }

Dataset load_dataset(const Manifest& manifest) {
  Dataset ds;
  ds.num_classes = manifest.num_classes;
  auto resolve = [&](const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : manifest.base_dir / path;
  };
  for (const auto& r : manifest.records) {
    Sample s;
    s.id = r.id;
    s.patient_id = r.patient_id;
    s.image = tsr_read(resolve(r.image_path));
    if (s.image.channels() != 2) throw FormatError(r.id + ": image must have 2 channels");
    const LabelMap mask = pgm_read(resolve(r.mask_path), manifest.num_classes);
    if (mask.height != s.image.shape().h || mask.width != s.image.shape().w)
      throw FormatError(r.id + ": mask size does not match the image");
    s.mask = one_hot_from_labels(mask, manifest.num_classes);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

Manifest write_dataset(const Dataset& ds, const fs::path& dir) {
  Manifest m;
  m.num_classes = ds.num_classes;
  m.base_dir = dir;
  for (const auto& s : ds.samples) {
    ManifestRecord r{s.id, s.patient_id, "images/" + s.id + ".tsr", "masks/" + s.id + ".pgm", std::nullopt};
    tsr_write(s.image, dir / r.image_path);
    pgm_write(labels_from_one_hot(s.mask), dir / r.mask_path, ds.num_classes);
    m.records.push_back(std::move(r));
  }
  write_text(manifest_to_json(m), dir / "manifest.json");
  return m;
}

std::string fold_plan_to_json(const FoldPlan& plan, std::uint64_t seed) {
  json folds = json::array();
  for (const auto& f : plan.folds) folds.push_back({{"train", f.train_patients}, {"validation", f.validation_patients}});
  return json{{"seed", seed}, {"test", plan.test_patients}, {"folds", folds}}.dump(2) + "\n";
}

FoldPlan fold_plan_from_json(const std::string& text) {
  const json j = parse(text, "fold plan");
  FoldPlan plan;
  plan.test_patients = required<std::vector<int>>(j, "test", "fold plan");
  for (const auto& f : required<json>(j, "folds", "fold plan"))
    plan.folds.push_back({required<std::vector<int>>(f, "train", "fold"), required<std::vector<int>>(f, "validation", "fold")});
  if (plan.folds.empty()) throw FormatError("fold plan lists no folds");
  return plan;
}

void write_history_csv(const std::vector<EpochRecord>& history, const fs::path& path) {
  std::ostringstream out;
  out << "epoch,train_loss,train_accuracy,validation_accuracy\n";
  char line[160];
  for (const auto& r : history) {
    std::snprintf(line, sizeof line, "%d,%.8f,%.8f,%.8f\n", r.epoch, r.train_loss, r.train_accuracy,
                  r.validation_accuracy);
    out << line;
  }
  write_text(out.str(), path);
}

}  // namespace segkit

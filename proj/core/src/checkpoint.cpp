#include "mvr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "mvr/errors.hpp"

namespace mvr {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint: truncated header");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::size_t header = kCheckpointMagic.size() + 4;
  for (const auto& e : entries) header += 4 + e.name.size() + 4 + 4 * e.shape.size() + 8;
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kCheckpointMagic.begin(), kCheckpointMagic.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = header;
  for (const auto& e : entries) {
    std::size_t n = 1;
    for (auto d : e.shape) n *= d;
    if (n != e.values.size()) throw std::invalid_argument("checkpoint entry '" + e.name + "': shape/value mismatch");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put<std::uint32_t>(out, d);
    put<std::uint64_t>(out, offset);
    offset += 4 * e.values.size();
  }
  for (const auto& e : entries) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(e.values.data());
    out.insert(out.end(), p, p + 4 * e.values.size());
  }
  return out;
}

std::vector<CheckpointEntry> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.get_string(kCheckpointMagic.size()) != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
  const auto count = r.get<std::uint32_t>();
  std::vector<CheckpointEntry> out(count);
  std::vector<std::uint64_t> offsets(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    out[i].name = r.get_string(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError("checkpoint: implausible rank in '" + out[i].name + "'");
    for (std::uint32_t k = 0; k < rank; ++k) out[i].shape.push_back(r.get<std::uint32_t>());
    offsets[i] = r.get<std::uint64_t>();
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint64_t n = 1;
    for (auto d : out[i].shape) {
      if (d != 0 && n > bytes.size() / d) throw FormatError("checkpoint: data of '" + out[i].name + "' out of range");
      n *= d;
    }
    if (offsets[i] < r.pos() || offsets[i] > bytes.size() || (bytes.size() - offsets[i]) / 4 < n) {
      throw FormatError("checkpoint: data of '" + out[i].name + "' out of range");
    }
    out[i].values.resize(n);
    std::memcpy(out[i].values.data(), bytes.data() + offsets[i], 4 * n);
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("cannot read '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("cannot write '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move '" + tmp.string() + "' into place: " + ec.message());
}

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries) {
  write_file(path, encode_checkpoint(entries));
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

std::vector<CheckpointEntry> parameter_entries(const ModelParams& params, std::string_view prefix) {
  std::vector<CheckpointEntry> out;
  for (const auto& e : params.entries()) {
    CheckpointEntry c;
    c.name = std::string(prefix) + e.name;
    for (int d : e.tensor.shape()) c.shape.push_back(static_cast<std::uint32_t>(d));
    c.values.assign(e.tensor.values().begin(), e.tensor.values().end());
    out.push_back(std::move(c));
  }
  return out;
}

const CheckpointEntry* find_entry(const std::vector<CheckpointEntry>& entries, std::string_view name) {
  for (const auto& e : entries) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void load_parameter_entries(const std::vector<CheckpointEntry>& entries, ModelParams& params,
                            std::string_view prefix) {
  for (auto& e : params.entries()) {
    const CheckpointEntry* c = find_entry(entries, std::string(prefix) + e.name);
    if (!c) throw FormatError("checkpoint: missing '" + std::string(prefix) + e.name + "'");
    std::vector<std::uint32_t> shape;
    for (int d : e.tensor.shape()) shape.push_back(static_cast<std::uint32_t>(d));
    if (c->shape != shape) throw FormatError("checkpoint: shape mismatch for '" + c->name + "'");
    std::copy(c->values.begin(), c->values.end(), e.tensor.mutable_values().begin());
  }
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"input_channels", c.input_channels}, {"base_width", c.base_width},
          {"aggregation", std::string(to_string(c.aggregation))}, {"feature_transform", c.feature_transform},
          {"fsr_dim", c.fsr_dim}, {"fsr_hidden", c.fsr_hidden}, {"fsr_layers", c.fsr_layers}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.input_channels = j.value("input_channels", c.input_channels);
    c.base_width = j.value("base_width", c.base_width);
    c.aggregation = aggregation_from_string(j.value("aggregation", std::string("none")));
    c.feature_transform = j.value("feature_transform", c.feature_transform);
    c.fsr_dim = j.value("fsr_dim", c.fsr_dim);
    c.fsr_hidden = j.value("fsr_hidden", c.fsr_hidden);
    c.fsr_layers = j.value("fsr_layers", c.fsr_layers);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p += ".json";
  return p;
}

void save_model(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params) {
  write_checkpoint(path, parameter_entries(params));
  const std::string text = config_to_json(config).dump(2) + "\n";
  write_file(config_sidecar(path), std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

LoadedModel load_model(const std::filesystem::path& path) {
  const auto text = read_file(config_sidecar(path));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("model config: " + std::string(e.what()));
  }
  LoadedModel out{config_from_json(j), {}};
  out.params = init_parameters<float>(out.config, 0);
  load_parameter_entries(read_checkpoint(path), out.params);
  return out;
}

}  // namespace mvr

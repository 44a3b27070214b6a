#include "skd/checkpoint.hpp"

#include "skd/digest.hpp"
#include "skd/errors.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace skd {

namespace {

constexpr std::array<char, 8> kMagic = {'S', 'K', 'D', 'C', 'K', 'P', 'T', '\0'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    default: throw IntegrityError(std::string("unsupported tensor dtype ") + c10::toString(t));
  }
}

torch::ScalarType dtype_from_name(const std::string& name) {
  if (name == "float32") return torch::kFloat32;
  if (name == "float64") return torch::kFloat64;
  if (name == "int64") return torch::kInt64;
  throw IntegrityError("unknown dtype '" + name + "' in checkpoint");
}

template <typename T>
void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::filesystem::path& path) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw IntegrityError("truncated checkpoint header in " + path.string());
  }
  return value;
}

std::vector<std::pair<std::string, torch::Tensor>> full_state(const StagedNetwork& net) {
  std::vector<std::pair<std::string, torch::Tensor>> state;
  for (const auto& id : all_groups()) {
    auto group = net->group_state(id);
    state.insert(state.end(), group.begin(), group.end());
  }
  return state;
}

bool is_buffer_name(const StagedNetwork& net, const std::string& name) {
  return net->named_buffers().contains(name);
}

struct RawCheckpoint {
  nlohmann::json header;
  std::string blob;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("checkpoint not found: " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw IntegrityError("not an skd checkpoint (bad magic): " + path.string());
  }
  const auto version = read_pod<uint32_t>(in, path);
  if (version != kCheckpointFormatVersion) {
    throw IntegrityError("unsupported checkpoint format version " + std::to_string(version) + " in " +
                         path.string());
  }
  const auto header_len = read_pod<uint64_t>(in, path);
  std::string header_text(header_len, '\0');
  if (!in.read(header_text.data(), static_cast<std::streamsize>(header_len))) {
    throw IntegrityError("truncated checkpoint header in " + path.string());
  }
  RawCheckpoint raw;
  try {
    raw.header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  raw.blob.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (sha256_hex(raw.blob) != raw.header.value("blob_sha256", "")) {
    throw IntegrityError("checkpoint blob checksum mismatch in " + path.string());
  }
  return raw;
}

void restore(StagedNetwork& net, const RawCheckpoint& raw, const std::filesystem::path& path) {
  torch::NoGradGuard no_grad;
  auto params = net->named_parameters();
  auto buffers = net->named_buffers();
  std::size_t restored = 0;
  for (const auto& entry : raw.header.at("tensors")) {
    const auto name = entry.at("name").get<std::string>();
    torch::Tensor* target = params.find(name);
    if (!target) target = buffers.find(name);
    if (!target) throw IntegrityError("checkpoint tensor '" + name + "' has no counterpart in " + net->model_name());
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto dtype = dtype_from_name(entry.at("dtype").get<std::string>());
    if (target->sizes() != c10::IntArrayRef(shape)) {
      throw IntegrityError("shape mismatch for '" + name + "' in " + path.string());
    }
    const auto offset = entry.at("offset").get<std::size_t>();
    const auto nbytes = entry.at("nbytes").get<std::size_t>();
    if (offset + nbytes > raw.blob.size()) throw IntegrityError("tensor '" + name + "' overruns blob in " + path.string());
    auto src = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (static_cast<std::size_t>(src.numel() * src.element_size()) != nbytes) {
      throw IntegrityError("byte count mismatch for '" + name + "' in " + path.string());
    }
    std::memcpy(src.data_ptr(), raw.blob.data() + offset, nbytes);
    target->copy_(src);
    ++restored;
  }
  if (restored != params.size() + buffers.size()) {
    throw IntegrityError("checkpoint " + path.string() + " restores " + std::to_string(restored) + " of " +
                         std::to_string(params.size() + buffers.size()) + " tensors");
  }
  if (raw.header.contains("frozen_mask")) {
    net->set_frozen_mask(raw.header.at("frozen_mask").get<std::vector<bool>>());
  }
}

}  // namespace

void save_checkpoint(const StagedNetwork& net, const std::filesystem::path& path, const nlohmann::json& metadata) {
  nlohmann::json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["architecture"] = {{"kind", to_string(net->kind())},
                            {"variant", net->variant()},
                            {"num_classes", net->num_classes()},
                            {"model", net->model_name()}};
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& id : all_groups()) {
    stages.push_back({{"name", id.name()}, {"modules", net->group_module_names(id)}});
  }
  header["stages"] = stages;
  header["frozen_mask"] = net->frozen_mask();

  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, tensor] : full_state(net)) {
    auto t = tensor.detach().contiguous().cpu();
    const std::size_t nbytes = t.numel() * t.element_size();
    tensors.push_back({{"name", name},
                       {"role", is_buffer_name(net, name) ? "buffer" : "parameter"},
                       {"dtype", dtype_name(t.scalar_type())},
                       {"shape", t.sizes().vec()},
                       {"offset", blob.size()},
                       {"nbytes", nbytes}});
    blob.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  header["tensors"] = tensors;
  header["blob_sha256"] = sha256_hex(blob);
  header["metadata"] = metadata;
  const std::string header_text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IntegrityError("cannot write checkpoint " + tmp.string());
    out.write(kMagic.data(), kMagic.size());
    write_pod<uint32_t>(out, kCheckpointFormatVersion);
    write_pod<uint64_t>(out, header_text.size());
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw IntegrityError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  auto raw = read_raw(path);
  const auto& arch = raw.header.at("architecture");
  LoadedCheckpoint loaded;
  try {
    loaded.net = StagedNetwork(task_kind_from_string(arch.at("kind").get<std::string>()), arch.at("variant").get<int>(),
                               arch.at("num_classes").get<int64_t>());
  } catch (const ConfigError& e) {
    throw IntegrityError("checkpoint " + path.string() + " describes an invalid architecture: " + e.what());
  }
  restore(loaded.net, raw, path);
  loaded.net->eval();
  loaded.metadata = raw.header.value("metadata", nlohmann::json::object());
  loaded.header = std::move(raw.header);
  return loaded;
}

void load_checkpoint_into(StagedNetwork& net, const std::filesystem::path& path) {
  auto raw = read_raw(path);
  const auto& arch = raw.header.at("architecture");
  if (arch.at("model").get<std::string>() != net->model_name() ||
      arch.at("num_classes").get<int64_t>() != net->num_classes()) {
    throw IntegrityError("checkpoint " + path.string() + " holds " + arch.at("model").get<std::string>() +
                         ", expected " + net->model_name());
  }
  restore(net, raw, path);
}

std::size_t import_state_dict(StagedNetwork& net, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("state dict not found: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  c10::IValue value;
  try {
    value = torch::pickle_load(bytes);
  } catch (const c10::Error& e) {
    throw IntegrityError("cannot unpickle state dict " + path.string() + ": " + e.what_without_backtrace());
  }
  if (!value.isGenericDict()) throw IntegrityError("state dict " + path.string() + " is not a dict");

  std::map<std::string, torch::Tensor> incoming;
  for (const auto& item : value.toGenericDict()) {
    if (!item.key().isString() || !item.value().isTensor()) continue;
    std::string key = item.key().toStringRef();
    if (key.rfind("fc.", 0) != 0 && key.rfind("encoder.", 0) != 0 && key.rfind("decoder.", 0) != 0) {
      key = "encoder." + key;
    }
    incoming[key] = item.value().toTensor();
  }

  torch::NoGradGuard no_grad;
  std::size_t imported = 0;
  auto copy_into = [&](const std::string& name, torch::Tensor& target) {
    auto it = incoming.find(name);
    if (it == incoming.end()) throw IntegrityError("state dict " + path.string() + " lacks '" + name + "'");
    if (it->second.sizes() != target.sizes()) {
      throw IntegrityError("state dict tensor '" + name + "' has an incompatible shape");
    }
    target.copy_(it->second.to(target.scalar_type()));
    ++imported;
  };
  for (auto& p : net->named_parameters()) copy_into(p.key(), p.value());
  for (auto& b : net->named_buffers()) copy_into(b.key(), b.value());
  return imported;
}

std::string checkpoint_file_name(const std::string& model, const std::string& dataset, const std::string& method,
                                 double fraction, int64_t seed) {
  const double pct = fraction * 100.0;
  std::ostringstream os;
  os << model << '_' << dataset << '_' << method << '_';
  if (std::abs(pct - std::round(pct)) < 1e-9) {
    os << static_cast<int64_t>(std::llround(pct));
  } else {
    os << std::setprecision(6) << pct;
  }
  os << "pct_seed" << seed << ".ckpt";
  return os.str();
}

}  // namespace skd

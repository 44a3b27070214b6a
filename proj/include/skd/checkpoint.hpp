#pragma once

#include "skd/model_zoo.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace skd {

inline constexpr uint32_t kCheckpointFormatVersion = 1;

/// Binary checkpoint container:
///   8-byte magic "SKDCKPT\0", u32 format version, u64 header length,
///   UTF-8 JSON header, then the concatenated little-endian tensor blobs.
/// The header names the architecture, the stage partition, the frozen mask,
/// every tensor (name, role, dtype, shape, offset, byte count), a SHA-256 of
/// the blob section and free-form metadata.
void save_checkpoint(const StagedNetwork& net, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  StagedNetwork net{nullptr};
  nlohmann::json header;
  nlohmann::json metadata;
};

/// Rebuilds the network described by the header and restores every tensor.
/// Throws MissingFileError if absent, IntegrityError on any mismatch.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Restores weights into an existing network of identical architecture.
void load_checkpoint_into(StagedNetwork& net, const std::filesystem::path& path);

/// Imports a state dict written by torch.save / torch::pickle_save (a dict of
/// name -> tensor). Torchvision names ("conv1.weight", "layer2.0.bn1.bias",
/// "fc.weight") are accepted alongside this framework's own names. Returns
/// the number of tensors imported; throws IntegrityError if a tensor of the
/// network is missing or has a different shape.
std::size_t import_state_dict(StagedNetwork& net, const std::filesystem::path& path);

/// `{model}_{dataset}_{method}_{fraction}pct_seed{n}.ckpt`
std::string checkpoint_file_name(const std::string& model, const std::string& dataset, const std::string& method,
                                 double fraction, int64_t seed);

}  // namespace skd

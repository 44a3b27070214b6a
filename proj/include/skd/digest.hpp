#pragma once

#include <torch/torch.h>

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace skd {

/// Lowercase hex SHA-256 of raw bytes.
std::string sha256_hex(std::string_view bytes);

/// Digest over named tensors: names, dtypes, shapes and raw contents, in the
/// given order. Bit-identical tensors give identical digests.
std::string tensor_digest(const std::vector<std::pair<std::string, torch::Tensor>>& named);

}  // namespace skd

#pragma once

#include "skd/data.hpp"

namespace skd {

/// Deterministic samples for the synthetic presets; example i of a split
/// depends only on (spec.seed, split, i).
std::vector<Sample> generate_synthetic(const DatasetSpec& spec, Split split);

}  // namespace skd

#include "skd/data.hpp"
#include "skd/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace skd {

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

FractionSample sample_fraction(const Dataset& dataset, double fraction, uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("fraction must lie in (0, 1], got " + std::to_string(fraction));
  }
  if (dataset.split() != Split::train) {
    throw DataError("fraction sampling draws from the train split only, got " + to_string(dataset.split()));
  }
  FractionSample sample;
  sample.dataset = dataset.spec().name;
  sample.fraction = fraction;
  sample.seed = seed;

  std::map<int64_t, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < dataset.size(); ++i) strata[dataset.stratum(i)].push_back(i);

  for (auto& [stratum, members] : strata) {
    const auto n = members.size();
    auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    take = std::clamp<std::size_t>(take, n > 0 ? 1 : 0, n);
    std::mt19937_64 rng(mix_seed(seed, static_cast<uint64_t>(stratum)));
    // Fisher-Yates written out so the permutation does not depend on the
    // standard library's std::shuffle.
    for (std::size_t i = n; i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng() % i);
      std::swap(members[i - 1], members[j]);
    }
    sample.indices.insert(sample.indices.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
  }
  std::sort(sample.indices.begin(), sample.indices.end());
  return sample;
}

void save_fraction_sample(const FractionSample& sample, const std::filesystem::path& path) {
  nlohmann::json j = {{"dataset", sample.dataset},
                      {"fraction", sample.fraction},
                      {"seed", sample.seed},
                      {"indices", sample.indices}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write fraction sample " + path.string());
  out << j.dump() << '\n';
}

FractionSample load_fraction_sample(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("fraction sample not found: " + path.string());
  try {
    auto j = nlohmann::json::parse(in);
    FractionSample sample;
    sample.dataset = j.at("dataset").get<std::string>();
    sample.fraction = j.at("fraction").get<double>();
    sample.seed = j.at("seed").get<uint64_t>();
    sample.indices = j.at("indices").get<std::vector<std::size_t>>();
    return sample;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("malformed fraction sample " + path.string() + ": " + e.what());
  }
}

}  // namespace skd

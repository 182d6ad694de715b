#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "das/features/features.hpp"

namespace das::features {

/// Contents of a feature store file. Every sample carries one entry per
/// element of `timesteps`, each a (rows x k) block plus a d-vector residual.
struct FeatureStore {
  FeatureMode mode;
  int k = 0;
  int d = 0;
  std::vector<int> timesteps;
  std::vector<SampleFeatures> samples;

  int rows() const { return mode.rows(d); }
};

inline constexpr std::uint32_t kStoreVersion = 1;

/// Layout (little-endian): "DASF", u32 version, u32 kind, u32 scalarizer,
/// u32 k, u32 d, u32 rows, u32 timestep count, u32 timesteps[], u64 sample
/// count, then per sample: i64 id, f64 blocks (row-major), f64 residuals.
std::string encode_store(const FeatureStore& store);
FeatureStore decode_store(const std::string& bytes);

void store_write(const std::filesystem::path& path, const FeatureStore& store);
FeatureStore store_read(const std::filesystem::path& path);

/// FNV-1a of the encoded store.
std::uint64_t store_fingerprint(const FeatureStore& store);

}  // namespace das::features

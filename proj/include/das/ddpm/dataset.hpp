#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace das::ddpm {

struct DataPoint {
  int id = 0;  // stable index in the full training set
  Eigen::VectorXd x0;
  int label = -1;  // generator class, never seen by the model
};

struct Dataset {
  std::string name;
  int dim = 0;
  std::vector<DataPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Two 2-D Gaussians with means (+-2, 0) and sigma 0.5, classes alternating.
Dataset make_gauss2(int n, std::uint64_t seed);

/// 8x8 images (flattened row-major, d = 64): a Gaussian bump near the
/// top-left (class 0) or bottom-right (class 1) corner plus pixel noise 0.1.
Dataset make_blobs8(int n, std::uint64_t seed);

/// Dispatches on name ("gauss2", "blobs8"); unknown names throw ParameterError.
Dataset make_dataset(const std::string& name, int n, std::uint64_t seed);

/// Held-out draws from the same generator, ids starting at 0.
Dataset make_validation_set(const std::string& name, int n, std::uint64_t seed);

/// Points whose mask entry is non-zero, keeping their original ids.
Dataset select(const Dataset& data, std::span<const std::uint8_t> mask);

/// Every point except the one at position `index`.
Dataset without(const Dataset& data, std::size_t index);

/// CSV with header `id,label,x0,...`; values printed round-trip exact.
void write_dataset_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset_csv(const std::filesystem::path& path);

}  // namespace das::ddpm

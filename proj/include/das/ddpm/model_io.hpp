#pragma once

#include <filesystem>
#include <string>

#include "das/ddpm/predictor.hpp"
#include "das/ddpm/schedule.hpp"

namespace das::ddpm {

struct ModelFile {
  NoisePredictor model;
  DiffusionSchedule schedule;
};

// Layout (little-endian):
//   "DAS1" | u32 layer count | u32 layer sizes... | u32 T |
//   f64 beta_start | f64 beta_end | f64 skip variance (0 = none) | f64 parameters...
// The embedding width is the first layer size minus the last.
std::string encode_model(const NoisePredictor& model, const DiffusionSchedule& schedule);
ModelFile decode_model(const std::string& bytes);

void write_model(const std::filesystem::path& path, const NoisePredictor& model, const DiffusionSchedule& schedule);
ModelFile read_model(const std::filesystem::path& path);

}  // namespace das::ddpm

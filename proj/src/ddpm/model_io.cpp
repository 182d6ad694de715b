#include "das/ddpm/model_io.hpp"

#include <cmath>
#include <vector>

#include "das/binary_io.hpp"

namespace das::ddpm {

std::string encode_model(const NoisePredictor& model, const DiffusionSchedule& schedule) {
  ByteWriter w;
  w.magic("DAS1");
  const auto& sizes = model.layer_sizes();
  w.u32(static_cast<std::uint32_t>(sizes.size()));
  for (int s : sizes) w.u32(static_cast<std::uint32_t>(s));
  w.u32(static_cast<std::uint32_t>(schedule.num_timesteps()));
  w.f64(schedule.beta_start());
  w.f64(schedule.beta_end());
  w.f64(model.skip_variance());
  w.f64s(model.params().data(), static_cast<std::size_t>(model.num_params()));
  return w.take();
}

ModelFile decode_model(const std::string& bytes) {
  ByteReader r(bytes, "model file");
  r.expect_magic("DAS1");
  const std::uint32_t count = r.u32("layer count");
  if (count < 2 || count > 64) r.fail("implausible layer count " + std::to_string(count));
  std::vector<int> sizes;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t s = r.u32("layer size");
    if (s == 0 || s > (1u << 20)) r.fail("implausible layer size " + std::to_string(s));
    sizes.push_back(static_cast<int>(s));
  }
  const int data_dim = sizes.back();
  const int embed_dim = sizes.front() - data_dim;
  if (embed_dim < 0 || embed_dim % 2 != 0) r.fail("first layer size inconsistent with output size");
  const std::uint32_t T = r.u32("timestep count");
  const double beta_start = r.f64("beta_start");
  const double beta_end = r.f64("beta_end");
  const double skip_variance = r.f64("skip variance");
  if (!std::isfinite(skip_variance) || skip_variance < 0.0) r.fail("invalid skip variance");

  ModelFile file{NoisePredictor(data_dim, std::vector<int>(sizes.begin() + 1, sizes.end() - 1), embed_dim), {}};
  try {
    file.schedule = make_linear_schedule(static_cast<int>(T), beta_start, beta_end);
  } catch (const ParameterError& e) {
    r.fail(std::string("invalid schedule: ") + e.what());
  }
  file.model.set_skip(file.schedule, skip_variance);
  r.f64s(file.model.params().data(), static_cast<std::size_t>(file.model.num_params()), "parameters");
  if (!r.at_end()) r.fail("trailing bytes after parameters");
  return file;
}

void write_model(const std::filesystem::path& path, const NoisePredictor& model, const DiffusionSchedule& schedule) {
  write_file_atomic(path, encode_model(model, schedule));
}

ModelFile read_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

}  // namespace das::ddpm

#include "das/features/store.hpp"

#include <Eigen/Dense>

#include "das/binary_io.hpp"

namespace das::features {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void check_shapes(const FeatureStore& store) {
  if (store.k < 1 || store.d < 1) throw ShapeError("feature store needs positive k and d");
  const auto rows = store.rows();
  for (const auto& s : store.samples) {
    if (s.timesteps != store.timesteps || s.blocks.size() != store.timesteps.size() ||
        s.residuals.size() != store.timesteps.size()) {
      throw ShapeError("sample " + std::to_string(s.id) + " does not follow the store's timestep list");
    }
    for (std::size_t j = 0; j < s.blocks.size(); ++j) {
      if (s.blocks[j].rows() != rows || s.blocks[j].cols() != store.k || s.residuals[j].size() != store.d) {
        throw ShapeError("sample " + std::to_string(s.id) + " has a block of the wrong shape");
      }
    }
  }
}

}  // namespace

std::string encode_store(const FeatureStore& store) {
  check_shapes(store);
  ByteWriter w;
  w.magic("DASF");
  w.u32(kStoreVersion);
  w.u32(static_cast<std::uint32_t>(store.mode.kind));
  w.u32(static_cast<std::uint32_t>(store.mode.scalarizer));
  w.u32(static_cast<std::uint32_t>(store.k));
  w.u32(static_cast<std::uint32_t>(store.d));
  w.u32(static_cast<std::uint32_t>(store.rows()));
  w.u32(static_cast<std::uint32_t>(store.timesteps.size()));
  for (int t : store.timesteps) w.u32(static_cast<std::uint32_t>(t));
  w.u64(store.samples.size());
  for (const auto& s : store.samples) {
    w.i64(s.id);
    for (const auto& b : s.blocks) {
      const RowMajor rm = b;
      w.f64s(rm.data(), static_cast<std::size_t>(rm.size()));
    }
    for (const auto& r : s.residuals) w.f64s(r.data(), static_cast<std::size_t>(r.size()));
  }
  return w.take();
}

FeatureStore decode_store(const std::string& bytes) {
  ByteReader r(bytes, "feature store");
  r.expect_magic("DASF");
  const std::uint32_t version = r.u32("version");
  if (version != kStoreVersion) r.fail("unsupported version " + std::to_string(version));

  FeatureStore store;
  const std::uint32_t kind = r.u32("mode");
  const std::uint32_t scalarizer = r.u32("scalarizer");
  if (kind > 1 || scalarizer > 3) r.fail("unknown feature mode");
  store.mode = {static_cast<FeatureKind>(kind), static_cast<Scalarizer>(scalarizer)};
  const std::uint32_t k = r.u32("k");
  const std::uint32_t d = r.u32("d");
  const std::uint32_t rows = r.u32("rows");
  if (k == 0 || d == 0 || k > (1u << 28) || d > (1u << 20)) r.fail("implausible k or d");
  store.k = static_cast<int>(k);
  store.d = static_cast<int>(d);
  if (rows != static_cast<std::uint32_t>(store.rows())) r.fail("row count does not match the feature mode");
  const std::uint32_t count = r.u32("timestep count");
  if (count > (1u << 20)) r.fail("implausible timestep count");
  for (std::uint32_t j = 0; j < count; ++j) store.timesteps.push_back(static_cast<int>(r.u32("timestep")));

  const std::uint64_t n = r.u64("sample count");
  const std::size_t per_sample =
      sizeof(std::int64_t) + sizeof(double) * count * (static_cast<std::size_t>(rows) * k + d);
  if (n > (bytes.size() - r.offset()) / per_sample) r.fail("sample count exceeds file size");
  store.samples.resize(n);
  for (auto& s : store.samples) {
    s.id = static_cast<int>(r.i64("sample id"));
    s.timesteps = store.timesteps;
    for (std::uint32_t j = 0; j < count; ++j) {
      RowMajor b(rows, k);
      r.f64s(b.data(), static_cast<std::size_t>(b.size()), "feature block");
      s.blocks.emplace_back(b);
    }
    for (std::uint32_t j = 0; j < count; ++j) {
      Eigen::VectorXd res(d);
      r.f64s(res.data(), d, "residual");
      s.residuals.push_back(std::move(res));
    }
  }
  if (!r.at_end()) r.fail("trailing bytes after the last sample");
  return store;
}

void store_write(const std::filesystem::path& path, const FeatureStore& store) {
  write_file_atomic(path, encode_store(store));
}

FeatureStore store_read(const std::filesystem::path& path) { return decode_store(read_file(path)); }

std::uint64_t store_fingerprint(const FeatureStore& store) { return fnv1a(encode_store(store)); }

}  // namespace das::features

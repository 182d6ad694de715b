#include "das/ddpm/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "das/errors.hpp"
#include "das/rng.hpp"

namespace das::ddpm {
namespace {

constexpr std::uint64_t kValidationStream = 0x7661;  // "va"

Dataset gauss2(int n, std::uint64_t seed) {
  Dataset data{"gauss2", 2, {}};
  Rng rng(seed, 0);
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    Eigen::VectorXd x(2);
    x[0] = (label == 0 ? -2.0 : 2.0) + 0.5 * rng.normal();
    x[1] = 0.5 * rng.normal();
    data.points.push_back({i, std::move(x), label});
  }
  return data;
}

Dataset blobs8(int n, std::uint64_t seed) {
  constexpr int kSide = 8;
  constexpr double kWidth = 1.5;
  Dataset data{"blobs8", kSide * kSide, {}};
  Rng rng(seed, 0);
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    const double base = label == 0 ? 1.5 : 5.5;
    const double cy = base + (rng.uniform() - 0.5);
    const double cx = base + (rng.uniform() - 0.5);
    const double amp = 0.8 + 0.4 * rng.uniform();
    Eigen::VectorXd x(kSide * kSide);
    for (int r = 0; r < kSide; ++r) {
      for (int c = 0; c < kSide; ++c) {
        const double dy = r - cy;
        const double dx = c - cx;
        x[r * kSide + c] = amp * std::exp(-(dx * dx + dy * dy) / (2.0 * kWidth * kWidth)) +
                           0.1 * rng.normal();
      }
    }
    data.points.push_back({i, std::move(x), label});
  }
  return data;
}

}  // namespace

Dataset make_gauss2(int n, std::uint64_t seed) { return gauss2(n, seed); }
Dataset make_blobs8(int n, std::uint64_t seed) { return blobs8(n, seed); }

Dataset make_dataset(const std::string& name, int n, std::uint64_t seed) {
  if (n < 1) throw ParameterError("dataset size must be positive");
  if (name == "gauss2") return gauss2(n, seed);
  if (name == "blobs8") return blobs8(n, seed);
  throw ParameterError("unknown dataset '" + name + "' (expected gauss2 or blobs8)");
}

Dataset make_validation_set(const std::string& name, int n, std::uint64_t seed) {
  return make_dataset(name, n, stream_seed(seed, kValidationStream));
}

Dataset select(const Dataset& data, std::span<const std::uint8_t> mask) {
  if (mask.size() != data.size()) {
    throw ShapeError("mask length " + std::to_string(mask.size()) + " != dataset size " +
                     std::to_string(data.size()));
  }
  Dataset out{data.name, data.dim, {}};
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (mask[i]) out.points.push_back(data.points[i]);
  }
  return out;
}

Dataset without(const Dataset& data, std::size_t index) {
  if (index >= data.size()) {
    throw IndexError("sample index " + std::to_string(index) + " out of range for " +
                     std::to_string(data.size()) + " samples");
  }
  Dataset out{data.name, data.dim, {}};
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (i != index) out.points.push_back(data.points[i]);
  }
  return out;
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << "# dataset=" << data.name << "\n";
  out << "id,label";
  for (int j = 0; j < data.dim; ++j) out << ",x" << j;
  out << "\n";
  char buf[32];
  for (const auto& p : data.points) {
    out << p.id << "," << p.label;
    for (int j = 0; j < data.dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", p.x0[j]);
      out << "," << buf;
    }
    out << "\n";
  }
}

Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset " + path.string());
  Dataset data;
  std::string line;
  std::uint64_t offset = 0;
  auto fail = [&](const std::string& msg) { throw FormatError("dataset " + path.string() + ": " + msg, offset); };

  if (!std::getline(in, line) || line.rfind("# dataset=", 0) != 0) fail("missing '# dataset=' line");
  data.name = line.substr(10);
  offset += line.size() + 1;
  if (!std::getline(in, line) || line.rfind("id,label", 0) != 0) fail("missing header");
  data.dim = 0;
  for (char c : line) data.dim += (c == ',');
  data.dim -= 1;
  if (data.dim < 1) fail("header has no feature columns");
  offset += line.size() + 1;

  while (std::getline(in, line)) {
    if (line.empty()) {
      offset += 1;
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    DataPoint p;
    p.x0.resize(data.dim);
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      try {
        if (col == 0) p.id = std::stoi(cell);
        else if (col == 1) p.label = std::stoi(cell);
        else if (col - 2 < data.dim) p.x0[col - 2] = std::stod(cell);
      } catch (const std::exception&) {
        fail("bad number '" + cell + "'");
      }
      ++col;
    }
    if (col != data.dim + 2) fail("row has " + std::to_string(col) + " columns");
    data.points.push_back(std::move(p));
    offset += line.size() + 1;
  }
  return data;
}

}  // namespace das::ddpm

#include "sscope/eigensolver.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace sscope {

static_assert(std::endian::native == std::endian::little, "basis files assume a little-endian host");

namespace {

constexpr std::array<char, 8> kMagic{'S', 'S', 'C', 'B', 'A', 'S', 'I', 'S'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T)))
    throw Error("basis file " + path.string() + " is truncated");
  return value;
}

void get_doubles(std::ifstream& in, double* dst, std::size_t count, const std::filesystem::path& path) {
  const auto bytes = static_cast<std::streamsize>(count * sizeof(double));
  if (!in.read(reinterpret_cast<char*>(dst), bytes)) throw Error("basis file " + path.string() + " is truncated");
}

}  // namespace

void save_basis(const EigenBasis& basis, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  const auto m = static_cast<std::size_t>(basis.size());
  if (basis.eigenvalues.size() != m) throw InvalidArgument("basis eigenvalue count does not match vectors");
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(basis.dim()));
  put<std::uint64_t>(out, m);
  put<std::int64_t>(out, basis.step);
  put<std::uint32_t>(out, basis.converged ? 1u : 0u);
  put<std::int32_t>(out, basis.iterations);
  out.write(reinterpret_cast<const char*>(basis.eigenvalues.data()), static_cast<std::streamsize>(m * sizeof(double)));
  std::vector<double> residuals = basis.residuals;
  residuals.resize(m, 0.0);
  out.write(reinterpret_cast<const char*>(residuals.data()), static_cast<std::streamsize>(m * sizeof(double)));
  // Column-major storage already places one vector after another.
  out.write(reinterpret_cast<const char*>(basis.vectors.data()),
            static_cast<std::streamsize>(basis.vectors.size() * sizeof(double)));
  if (!out) throw Error("failed writing " + path.string());
}

EigenBasis load_basis(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open basis file " + path.string());
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw Error(path.string() + " is not a basis file");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) throw Error("unsupported basis file version " + std::to_string(version));
  const auto p = get<std::uint64_t>(in, path);
  const auto m = get<std::uint64_t>(in, path);
  EigenBasis basis;
  basis.step = get<std::int64_t>(in, path);
  basis.converged = get<std::uint32_t>(in, path) != 0;
  basis.iterations = get<std::int32_t>(in, path);
  basis.eigenvalues.resize(m);
  basis.residuals.resize(m);
  get_doubles(in, basis.eigenvalues.data(), m, path);
  get_doubles(in, basis.residuals.data(), m, path);
  basis.vectors.resize(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(m));
  get_doubles(in, basis.vectors.data(), p * m, path);
  return basis;
}

}  // namespace sscope

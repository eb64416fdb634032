#pragma once

// Uniform-grid scalar fields, the dihedral group D4 acting on square grids,
// and the cell-area-weighted norms used by every metric.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "chno/error.hpp"

namespace chno {

enum class Boundary { Periodic, NeumannCosine };

inline const char *to_string(Boundary b) {
  return b == Boundary::Periodic ? "periodic" : "neumann";
}

inline Boundary boundary_from_string(const std::string &s) {
  if (s == "periodic") return Boundary::Periodic;
  if (s == "neumann" || s == "neumann_cosine") return Boundary::NeumannCosine;
  throw ConfigError("unknown boundary '" + s + "' (expected periodic|neumann)");
}

struct Grid2D {
  int nx = 32;
  int ny = 32;
  double lx = 1.0;
  double ly = 1.0;
  Boundary boundary = Boundary::Periodic;

  Grid2D() = default;
  Grid2D(int nx_, int ny_, double lx_ = 1.0, double ly_ = 1.0,
         Boundary b = Boundary::Periodic)
      : nx(nx_), ny(ny_), lx(lx_), ly(ly_), boundary(b) {
    validate();
  }

  void validate() const {
    if (nx < 4 || ny < 4)
      throw ConfigError("grid needs at least 4 cells per axis, got " +
                        std::to_string(nx) + "x" + std::to_string(ny));
    if (!(lx > 0.0) || !(ly > 0.0)) throw ConfigError("grid edge lengths must be positive");
  }

  std::size_t size() const { return static_cast<std::size_t>(nx) * ny; }
  double dx() const { return lx / nx; }
  double dy() const { return ly / ny; }
  double cell_area() const { return dx() * dy(); }
  double area() const { return lx * ly; }
  bool square() const { return nx == ny && lx == ly; }

  /// Cell-centre coordinates.
  double x(int j) const { return (j + 0.5) * dx(); }
  double y(int i) const { return (i + 0.5) * dy(); }

  Grid2D with_size(int nx2, int ny2) const { return Grid2D(nx2, ny2, lx, ly, boundary); }
  Grid2D with_boundary(Boundary b) const { return Grid2D(nx, ny, lx, ly, b); }

  friend bool operator==(const Grid2D &, const Grid2D &) = default;
};

/// Order parameter sampled at cell centres. Row i runs along y, column j
/// along x; storage is row-major, values[i * nx + j].
class ScalarField2D {
public:
  ScalarField2D() = default;
  explicit ScalarField2D(const Grid2D &g, double fill = 0.0) : grid_(g), values_(g.size(), fill) {}
  ScalarField2D(const Grid2D &g, std::vector<double> v) : grid_(g), values_(std::move(v)) {
    if (values_.size() != grid_.size())
      throw ShapeError("field value count " + std::to_string(values_.size()) +
                       " does not match grid " + std::to_string(grid_.size()));
  }

  /// Sample f(x, y) at the cell centres.
  template <class F> static ScalarField2D from_function(const Grid2D &g, F &&f) {
    ScalarField2D out(g);
    for (int i = 0; i < g.ny; ++i)
      for (int j = 0; j < g.nx; ++j) out(i, j) = f(g.x(j), g.y(i));
    return out;
  }

  const Grid2D &grid() const { return grid_; }
  int nx() const { return grid_.nx; }
  int ny() const { return grid_.ny; }
  std::size_t size() const { return values_.size(); }

  double &operator()(int i, int j) { return values_[static_cast<std::size_t>(i) * grid_.nx + j]; }
  double operator()(int i, int j) const {
    return values_[static_cast<std::size_t>(i) * grid_.nx + j];
  }
  double &operator[](std::size_t k) { return values_[k]; }
  double operator[](std::size_t k) const { return values_[k]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::vector<double> &data() { return values_; }
  const std::vector<double> &data() const { return values_; }

  bool all_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double max_abs() const {
    double m = 0.0;
    for (double v : values_) m = std::max(m, std::abs(v));
    return m;
  }

  ScalarField2D &operator+=(const ScalarField2D &o) {
    check_same(o);
    for (std::size_t k = 0; k < values_.size(); ++k) values_[k] += o.values_[k];
    return *this;
  }
  ScalarField2D &operator-=(const ScalarField2D &o) {
    check_same(o);
    for (std::size_t k = 0; k < values_.size(); ++k) values_[k] -= o.values_[k];
    return *this;
  }
  ScalarField2D &operator*=(double a) {
    for (double &v : values_) v *= a;
    return *this;
  }
  friend ScalarField2D operator+(ScalarField2D a, const ScalarField2D &b) { return a += b; }
  friend ScalarField2D operator-(ScalarField2D a, const ScalarField2D &b) { return a -= b; }
  friend ScalarField2D operator*(double s, ScalarField2D a) { return a *= s; }

  void check_same(const ScalarField2D &o) const {
    if (o.nx() != nx() || o.ny() != ny())
      throw ShapeError("field shapes differ: " + std::to_string(ny()) + "x" +
                       std::to_string(nx()) + " vs " + std::to_string(o.ny()) + "x" +
                       std::to_string(o.nx()));
  }

  friend bool operator==(const ScalarField2D &a, const ScalarField2D &b) {
    return a.grid_ == b.grid_ && a.values_ == b.values_;
  }

private:
  Grid2D grid_;
  std::vector<double> values_;
};

struct Trajectory {
  std::vector<ScalarField2D> fields;
  double dt = 0.01;
  double t0 = 0.0;

  std::size_t size() const { return fields.size(); }
  double time(std::size_t k) const { return t0 + dt * static_cast<double>(k); }
  double t_end() const { return fields.empty() ? t0 : time(fields.size() - 1); }
  const Grid2D &grid() const { return fields.front().grid(); }

  void validate() const {
    if (fields.empty()) throw ShapeError("trajectory must contain at least one frame");
    if (!(dt > 0.0)) throw ConfigError("trajectory sampling interval must be positive");
    for (const auto &f : fields)
      if (f.nx() != fields.front().nx() || f.ny() != fields.front().ny())
        throw ShapeError("trajectory frames do not share one grid");
  }
};

// ---------------------------------------------------------------------------
// D4

/// g = R^rotation * S^reflected, where S (horizontal flip) acts first and R is
/// one counterclockwise quarter turn, new[i][j] = old[j][n-1-i].
struct D4Element {
  int rotation = 0;
  bool reflected = false;

  static constexpr D4Element identity() { return {0, false}; }
  static constexpr D4Element r(int k = 1) { return {((k % 4) + 4) % 4, false}; }
  static constexpr D4Element s() { return {0, true}; }

  /// Dense index 0..7, rotations first.
  constexpr int index() const { return rotation + (reflected ? 4 : 0); }
  static constexpr D4Element from_index(int k) { return {k % 4, k >= 4}; }

  friend constexpr bool operator==(const D4Element &, const D4Element &) = default;
};

inline std::string to_string(const D4Element &g) {
  std::string out = g.rotation == 0 ? "I" : "r" + std::to_string(g.rotation);
  if (g.reflected) out = (g.rotation == 0 ? std::string("s") : out + "s");
  return out;
}

inline std::array<D4Element, 8> d4_elements() {
  std::array<D4Element, 8> out{};
  for (int k = 0; k < 8; ++k) out[k] = D4Element::from_index(k);
  return out;
}

/// compose(g, h) acts as g after h.
constexpr D4Element d4_compose(const D4Element &g, const D4Element &h) {
  // S R = R^{-1} S
  const int r = g.reflected ? g.rotation - h.rotation : g.rotation + h.rotation;
  return {((r % 4) + 4) % 4, g.reflected != h.reflected};
}

constexpr D4Element d4_inverse(const D4Element &g) {
  if (g.reflected) return g;
  return {(4 - g.rotation) % 4, false};
}

/// Apply g to one n x n row-major plane. `out` must not alias `in`.
template <class T>
void d4_apply_plane(const D4Element &g, std::span<const T> in, std::span<T> out, int n) {
  const auto N = static_cast<std::size_t>(n);
  // Map each output index back to its source: out[i][j] = in[src(i, j)].
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      int a = i, b = j;
      // Undo rotation^k: out = R^k(v) with R(v)[i][j] = v[j][n-1-i].
      for (int k = 0; k < g.rotation; ++k) {
        const int na = b, nb = n - 1 - a;
        a = na;
        b = nb;
      }
      if (g.reflected) b = n - 1 - b;
      out[static_cast<std::size_t>(i) * N + j] = in[static_cast<std::size_t>(a) * N + b];
    }
  }
}

inline ScalarField2D d4_apply(const D4Element &g, const ScalarField2D &f) {
  if (f.nx() != f.ny())
    throw ShapeError("D4 action needs a square grid, got " + std::to_string(f.ny()) + "x" +
                     std::to_string(f.nx()));
  ScalarField2D out(f.grid());
  d4_apply_plane<double>(g, f.values(), out.values(), f.nx());
  return out;
}

// ---------------------------------------------------------------------------
// Norms

/// Sum of values^2 weighted by the cell area.
inline double l2_norm_sq(const ScalarField2D &f) {
  double s = 0.0;
  for (double v : f.values()) s += v * v;
  return s * f.grid().cell_area();
}

inline double mean(const ScalarField2D &f) {
  const auto v = f.values();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Snapshot I/O: 24-byte header (magic "CHF2", u32 version, u32 nx, u32 ny,
// f64 lx) followed by one or more frames of nx*ny little-endian f64 values.

namespace io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T> void put_le(std::ostream &os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(reinterpret_cast<const char *>(bytes.data()), sizeof(T));
}

template <class T> T get_le(std::istream &is) {
  std::array<unsigned char, sizeof(T)> bytes{};
  is.read(reinterpret_cast<char *>(bytes.data()), sizeof(T));
  if (!is) throw FormatError("unexpected end of stream");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

inline constexpr std::uint32_t kFieldVersion = 1;
inline constexpr std::size_t kFieldHeaderBytes = 24;

inline void write_field_header(std::ostream &os, const Grid2D &g) {
  os.write("CHF2", 4);
  put_le<std::uint32_t>(os, kFieldVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(g.nx));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(g.ny));
  put_le<double>(os, g.lx);
}

inline void write_field_values(std::ostream &os, const ScalarField2D &f) {
  for (double v : f.values()) put_le<double>(os, v);
}

/// Writes header + all frames. ly is not stored; readers assume square cells.
inline void write_frames(const std::string &path, std::span<const ScalarField2D> frames) {
  if (frames.empty()) throw IoError("refusing to write an empty frame sequence to " + path);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_field_header(os, frames.front().grid());
  for (const auto &f : frames) {
    frames.front().check_same(f);
    write_field_values(os, f);
  }
  if (!os) throw IoError("write failed for " + path);
}

inline void write_field(const std::string &path, const ScalarField2D &f) {
  write_frames(path, std::span<const ScalarField2D>(&f, 1));
}

inline std::vector<ScalarField2D> read_frames(const std::string &path,
                                              Boundary boundary = Boundary::Periodic) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFileError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "CHF2", 4) != 0) throw FormatError(path + ": bad field magic");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kFieldVersion)
    throw VersionError(path + ": unsupported field format version " + std::to_string(version));
  const auto nx = static_cast<int>(get_le<std::uint32_t>(is));
  const auto ny = static_cast<int>(get_le<std::uint32_t>(is));
  const double lx = get_le<double>(is);
  const Grid2D g(nx, ny, lx, lx * ny / nx, boundary);

  is.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(is.tellg());
  const std::size_t frame_bytes = g.size() * sizeof(double);
  if (bytes < kFieldHeaderBytes + frame_bytes || (bytes - kFieldHeaderBytes) % frame_bytes != 0)
    throw FormatError(path + ": payload is not a whole number of frames");
  is.seekg(static_cast<std::streamoff>(kFieldHeaderBytes));
  const std::size_t n_frames = (bytes - kFieldHeaderBytes) / frame_bytes;
  std::vector<ScalarField2D> out;
  out.reserve(n_frames);
  for (std::size_t k = 0; k < n_frames; ++k) {
    ScalarField2D f(g);
    for (double &v : f.data()) v = get_le<double>(is);
    out.push_back(std::move(f));
  }
  return out;
}

inline ScalarField2D read_field(const std::string &path, Boundary boundary = Boundary::Periodic) {
  auto frames = read_frames(path, boundary);
  return std::move(frames.front());
}

/// One row per cell: i,j,value.
inline void write_field_csv(std::ostream &os, const ScalarField2D &f) {
  os << "i,j,value\n" << std::setprecision(17);
  for (int i = 0; i < f.ny(); ++i)
    for (int j = 0; j < f.nx(); ++j) os << i << ',' << j << ',' << f(i, j) << '\n';
}

inline void write_field_csv(const std::string &path, const ScalarField2D &f) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_field_csv(os, f);
}

} // namespace io

} // namespace chno

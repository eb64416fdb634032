#pragma once

// Solver-generated datasets: one CHF2 trajectory per case, a text manifest
// that pins every generation input, and CRC-64 checksums of the case files.
//
//   <dir>/manifest.txt
//   <dir>/checksums.txt
//   <dir>/cases/case_<id>.chf2

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "chno/fields.hpp"
#include "chno/kv.hpp"
#include "chno/solver.hpp"

namespace chno {

inline constexpr int kDatasetFormatVersion = 1;

enum class Split { Train, Val, Test };

inline const char *to_string(Split s) {
  switch (s) {
  case Split::Train: return "train";
  case Split::Val: return "val";
  case Split::Test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string &s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + s + "' (expected train|val|test)");
}

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  int n_sims = 40;
  CHParams params;
  Grid2D grid{32, 32, 1.0, 1.0, Boundary::NeumannCosine};
  double dt_sample = 0.01;
  int frames_per_sim = 30;
  int fragments_per_sim = 10;
  int n_in = 5;
  int n_out = 3;
  std::uint64_t base_seed = 0;
  double noise_amplitude = 0.05;
  double noise_mean = 0.0;
  std::vector<Split> split;          // indexed by case id
  std::vector<int> failed_cases;     // solver divergence
  std::vector<int> bound_violations; // max|phi| > 1.05 in some stored frame

  long steps_per_sample() const {
    const double r = dt_sample / params.dt;
    const long n = std::lround(r);
    if (n < 1 || std::abs(r - static_cast<double>(n)) > 1e-9 * r)
      throw ConfigError("dt_sample must be an integer multiple of the solver dt");
    return n;
  }

  void validate() const {
    params.validate();
    grid.validate();
    if (params.boundary != grid.boundary) throw ConfigError("solver basis differs from the grid boundary");
    if (n_sims < 1) throw ConfigError("n_sims must be positive");
    if (frames_per_sim < 2) throw ConfigError("frames_per_sim must be at least 2");
    if (n_in < 1 || n_out < 1) throw ConfigError("n_in and n_out must be positive");
    if (n_in + n_out > frames_per_sim)
      throw ConfigError("n_in + n_out exceeds frames_per_sim");
    if (fragments_per_sim < 1 || fragments_per_sim > frames_per_sim - n_in - n_out + 1)
      throw ConfigError("fragments_per_sim must lie in [1, frames_per_sim - n_in - n_out + 1]");
    if (!(noise_amplitude >= 0.0)) throw ConfigError("noise amplitude must be non-negative");
    steps_per_sample();
  }
};

/// 32^2, 40 cases. epsilon is raised to 0.04 so the interface spans a few
/// cells at this resolution.
inline DatasetManifest desk_profile() {
  DatasetManifest m;
  m.params.epsilon = 0.04;
  m.fragments_per_sim = 23; // every window
  return m;
}

/// 100^2, 300 cases, 30 frames at 0.01 s, 30 fragments each (overlapping).
inline DatasetManifest paper_profile() {
  DatasetManifest m;
  m.n_sims = 300;
  m.grid = Grid2D(100, 100, 1.0, 1.0, Boundary::NeumannCosine);
  m.params.epsilon = 0.01;
  m.fragments_per_sim = 23;
  return m;
}

inline DatasetManifest profile_by_name(const std::string &name) {
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  throw ConfigError("unknown profile '" + name + "' (expected desk|paper)");
}

struct Sample {
  int case_id = 0;
  int fragment_id = 0;
  std::vector<ScalarField2D> input;
  std::vector<ScalarField2D> target;
  double t_start = 0.0;
};

// ---------------------------------------------------------------------------
// CRC-64/XZ (ECMA-182 polynomial, reflected, init and xorout all ones).

inline std::uint64_t crc64(const void *data, std::size_t n, std::uint64_t crc = 0) {
  static const auto table = [] {
    std::array<std::uint64_t, 256> t{};
    for (std::uint64_t i = 0; i < 256; ++i) {
      std::uint64_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? (c >> 1) ^ 0xC96C5795D7870F42ULL : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc = ~crc;
  const auto *p = static_cast<const unsigned char *>(data);
  for (std::size_t k = 0; k < n; ++k) crc = table[(crc ^ p[k]) & 0xFF] ^ (crc >> 8);
  return ~crc;
}

inline std::uint64_t crc64_file(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MissingFileError("missing file " + path);
  std::vector<char> buf(1 << 16);
  std::uint64_t crc = 0;
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    crc = crc64(buf.data(), static_cast<std::size_t>(is.gcount()), crc);
  }
  return crc;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Splits and fragments

/// Seeded shuffle; first 80% train, next 10% val, rest test.
inline std::vector<Split> split_cases(int n, std::uint64_t seed) {
  if (n < 10) throw ConfigError("splitting needs at least 10 cases, got " + std::to_string(n));
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle.
  for (int k = n - 1; k > 0; --k) {
    const int j = static_cast<int>(rng() % static_cast<std::uint64_t>(k + 1));
    std::swap(ids[k], ids[j]);
  }
  const int n_train = static_cast<int>(std::lround(0.8 * n));
  const int n_val = static_cast<int>(std::lround(0.1 * n));
  std::vector<Split> out(n, Split::Test);
  for (int k = 0; k < n; ++k)
    out[ids[k]] = k < n_train ? Split::Train : (k < n_train + n_val ? Split::Val : Split::Test);
  return out;
}

/// Start indices drawn without replacement with probability proportional to
/// the frame-difference norm at the window start (plus a small floor so that
/// quiescent windows stay reachable).
inline std::vector<Sample> extract_fragments(const Trajectory &traj, int n_fragments, int n_in, int n_out,
                                             std::uint64_t seed, int case_id = 0) {
  const int len = static_cast<int>(traj.size());
  const int span = n_in + n_out;
  if (len < span)
    throw ShapeError("trajectory of " + std::to_string(len) + " frames is shorter than a " +
                     std::to_string(span) + "-frame fragment");
  const int n_windows = len - span + 1;
  if (n_fragments < 1 || n_fragments > n_windows)
    throw ConfigError("cannot draw " + std::to_string(n_fragments) + " distinct fragments from " +
                      std::to_string(n_windows) + " windows");
  std::vector<double> w(n_windows);
  double wmax = 0.0;
  for (int s = 0; s < n_windows; ++s) {
    w[s] = std::sqrt(l2_norm_sq(traj.fields[s + 1] - traj.fields[s]));
    wmax = std::max(wmax, w[s]);
  }
  for (double &v : w) v += 1e-3 * wmax + 1e-300;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<int> starts;
  for (int f = 0; f < n_fragments; ++f) {
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    double r = u(rng) * total;
    int pick = n_windows - 1;
    for (int s = 0; s < n_windows; ++s) {
      if (w[s] <= 0.0) continue;
      if (r < w[s]) {
        pick = s;
        break;
      }
      r -= w[s];
    }
    while (w[pick] <= 0.0) --pick; // rounding at the tail
    starts.push_back(pick);
    w[pick] = 0.0;
  }
  std::sort(starts.begin(), starts.end());

  std::vector<Sample> out;
  for (std::size_t f = 0; f < starts.size(); ++f) {
    Sample smp;
    smp.case_id = case_id;
    smp.fragment_id = static_cast<int>(f);
    smp.t_start = traj.time(starts[f]);
    for (int k = 0; k < n_in; ++k) smp.input.push_back(traj.fields[starts[f] + k]);
    for (int k = 0; k < n_out; ++k) smp.target.push_back(traj.fields[starts[f] + n_in + k]);
    out.push_back(std::move(smp));
  }
  return out;
}

inline std::uint64_t fragment_seed(const DatasetManifest &m, int case_id) {
  return m.base_seed * 0x9E3779B97F4A7C15ULL + 0x5851F42D4C957F2DULL * static_cast<std::uint64_t>(case_id + 1);
}

// ---------------------------------------------------------------------------
// Manifest IO

namespace detail {

inline std::string join_ints(const std::vector<int> &v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
  return s;
}

inline std::vector<int> parse_ints(const std::string &s, const std::string &what) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(parse_number<int>(item, what));
  return out;
}

inline std::string case_key(int id) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << id;
  return os.str();
}

} // namespace detail

inline std::string case_file_name(int id) { return "case_" + detail::case_key(id) + ".chf2"; }

inline KeyValues manifest_to_map(const DatasetManifest &m) {
  KeyValues kv;
  kv["format_version"] = std::to_string(m.format_version);
  kv["n_sims"] = std::to_string(m.n_sims);
  kv["solver.gamma"] = format_double(m.params.gamma);
  kv["solver.lambda"] = format_double(m.params.lambda);
  kv["solver.epsilon"] = format_double(m.params.epsilon);
  kv["solver.dt"] = format_double(m.params.dt);
  kv["solver.stabilization"] = format_double(m.params.stabilization);
  kv["solver.boundary"] = to_string(m.params.boundary);
  kv["grid.nx"] = std::to_string(m.grid.nx);
  kv["grid.ny"] = std::to_string(m.grid.ny);
  kv["grid.lx"] = format_double(m.grid.lx);
  kv["grid.ly"] = format_double(m.grid.ly);
  kv["dt_sample"] = format_double(m.dt_sample);
  kv["frames_per_sim"] = std::to_string(m.frames_per_sim);
  kv["fragments_per_sim"] = std::to_string(m.fragments_per_sim);
  kv["n_in"] = std::to_string(m.n_in);
  kv["n_out"] = std::to_string(m.n_out);
  kv["base_seed"] = std::to_string(m.base_seed);
  kv["noise_amplitude"] = format_double(m.noise_amplitude);
  kv["noise_mean"] = format_double(m.noise_mean);
  kv["failed_cases"] = detail::join_ints(m.failed_cases);
  kv["bound_violations"] = detail::join_ints(m.bound_violations);
  for (std::size_t k = 0; k < m.split.size(); ++k)
    kv["split." + detail::case_key(static_cast<int>(k))] = to_string(m.split[k]);
  return kv;
}

inline DatasetManifest manifest_from_map(const KeyValues &kv, const std::string &origin) {
  auto get = [&](const std::string &k) { return kv_get(kv, k, origin); };
  DatasetManifest m;
  m.format_version = parse_number<int>(get("format_version"), "format_version");
  if (m.format_version != kDatasetFormatVersion)
    throw VersionError(origin + ": dataset format version " + std::to_string(m.format_version) +
                       " is not supported (expected " + std::to_string(kDatasetFormatVersion) + ")");
  m.n_sims = parse_number<int>(get("n_sims"), "n_sims");
  m.params.gamma = parse_number<double>(get("solver.gamma"), "solver.gamma");
  m.params.lambda = parse_number<double>(get("solver.lambda"), "solver.lambda");
  m.params.epsilon = parse_number<double>(get("solver.epsilon"), "solver.epsilon");
  m.params.dt = parse_number<double>(get("solver.dt"), "solver.dt");
  m.params.stabilization = parse_number<double>(get("solver.stabilization"), "solver.stabilization");
  m.params.boundary = boundary_from_string(get("solver.boundary"));
  m.grid = Grid2D(parse_number<int>(get("grid.nx"), "grid.nx"), parse_number<int>(get("grid.ny"), "grid.ny"),
                  parse_number<double>(get("grid.lx"), "grid.lx"), parse_number<double>(get("grid.ly"), "grid.ly"),
                  m.params.boundary);
  m.dt_sample = parse_number<double>(get("dt_sample"), "dt_sample");
  m.frames_per_sim = parse_number<int>(get("frames_per_sim"), "frames_per_sim");
  m.fragments_per_sim = parse_number<int>(get("fragments_per_sim"), "fragments_per_sim");
  m.n_in = parse_number<int>(get("n_in"), "n_in");
  m.n_out = parse_number<int>(get("n_out"), "n_out");
  m.base_seed = parse_number<std::uint64_t>(get("base_seed"), "base_seed");
  m.noise_amplitude = parse_number<double>(get("noise_amplitude"), "noise_amplitude");
  m.noise_mean = parse_number<double>(get("noise_mean"), "noise_mean");
  m.failed_cases = detail::parse_ints(get("failed_cases"), "failed_cases");
  m.bound_violations = detail::parse_ints(get("bound_violations"), "bound_violations");
  for (int k = 0; k < m.n_sims; ++k) {
    const auto it = kv.find("split." + detail::case_key(k));
    if (it == kv.end()) throw FormatError(origin + ": split table lacks case " + std::to_string(k));
    m.split.push_back(split_from_string(it->second));
  }
  m.validate();
  return m;
}

inline DatasetManifest read_manifest(const std::string &dir) {
  const auto path = (std::filesystem::path(dir) / "manifest.txt").string();
  if (!std::filesystem::exists(path)) throw MissingFileError("missing dataset manifest " + path);
  return manifest_from_map(read_kv(path), path);
}

// ---------------------------------------------------------------------------
// Generation

struct GenerateOptions {
  bool force = false;
  int threads = 1;
  std::function<void(int case_id, bool ok)> progress;
};

/// Simulates one case from its seeded noise initial condition.
inline Trajectory simulate_case(const DatasetManifest &m, int case_id) {
  const auto f0 = noise_field(m.grid, m.noise_amplitude, m.base_seed + static_cast<std::uint64_t>(case_id),
                              m.noise_mean);
  const long every = m.steps_per_sample();
  return simulate(f0, m.params, every * (m.frames_per_sim - 1), every);
}

/// Writes a complete dataset into `dir`. Refuses a non-empty directory
/// unless `force`. Returns the manifest as written.
inline DatasetManifest generate(DatasetManifest m, const std::string &dir, const GenerateOptions &opt = {}) {
  namespace fs = std::filesystem;
  m.validate();
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!opt.force) throw ConfigError("output directory " + dir + " is not empty (use --force to overwrite)");
    fs::remove_all(fs::path(dir) / "cases");
    fs::remove(fs::path(dir) / "manifest.txt");
    fs::remove(fs::path(dir) / "checksums.txt");
  }
  fs::create_directories(fs::path(dir) / "cases");

  std::vector<char> failed(m.n_sims, 0), violated(m.n_sims, 0);
  std::vector<std::string> sums(m.n_sims);
  std::atomic<int> next{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (int id = next++; id < m.n_sims; id = next++) {
      const auto path = (fs::path(dir) / "cases" / case_file_name(id)).string();
      bool ok = true;
      try {
        const auto traj = simulate_case(m, id);
        for (const auto &f : traj.fields)
          if (f.max_abs() > 1.05) violated[id] = 1;
        io::write_frames(path, traj.fields);
      } catch (const IntegrationError &) {
        ok = false;
        failed[id] = 1;
        io::write_frames(path, std::vector<ScalarField2D>{ScalarField2D(m.grid)});
      }
      sums[id] = hex64(crc64_file(path));
      if (opt.progress) {
        std::lock_guard lock(progress_mutex);
        opt.progress(id, ok);
      }
    }
  };
  const int n_threads = std::max(1, std::min(opt.threads, m.n_sims));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  m.split = split_cases(m.n_sims, m.base_seed);
  m.failed_cases.clear();
  m.bound_violations.clear();
  for (int id = 0; id < m.n_sims; ++id) {
    if (failed[id]) m.failed_cases.push_back(id);
    if (violated[id]) m.bound_violations.push_back(id);
  }
  write_kv((fs::path(dir) / "manifest.txt").string(), manifest_to_map(m));
  std::ofstream cs(fs::path(dir) / "checksums.txt");
  for (int id = 0; id < m.n_sims; ++id) cs << "cases/" << case_file_name(id) << " " << sums[id] << '\n';
  if (!cs) throw IoError("cannot write checksums in " + dir);
  return m;
}

// ---------------------------------------------------------------------------
// Loading

class Dataset {
public:
  explicit Dataset(std::string dir) : dir_(std::move(dir)) {
    manifest_ = read_manifest(dir_);
    const auto cpath = (std::filesystem::path(dir_) / "checksums.txt").string();
    std::ifstream is(cpath);
    if (!is) throw MissingFileError("missing checksum table " + cpath);
    std::string name, sum;
    while (is >> name >> sum) sums_[name] = sum;
  }

  const DatasetManifest &manifest() const { return manifest_; }
  const std::string &dir() const { return dir_; }

  std::vector<int> cases(Split s) const {
    std::vector<int> out;
    for (int id = 0; id < manifest_.n_sims; ++id)
      if (manifest_.split[id] == s && !is_failed(id)) out.push_back(id);
    return out;
  }

  bool is_failed(int id) const {
    return std::find(manifest_.failed_cases.begin(), manifest_.failed_cases.end(), id) !=
           manifest_.failed_cases.end();
  }

  /// Reads one case after verifying its checksum.
  Trajectory trajectory(int id) const {
    const std::string rel = "cases/" + case_file_name(id);
    const auto path = (std::filesystem::path(dir_) / rel).string();
    if (!std::filesystem::exists(path)) throw MissingFileError("missing case file " + path);
    const auto it = sums_.find(rel);
    if (it == sums_.end()) throw FormatError("checksum table has no entry for " + rel);
    if (hex64(crc64_file(path)) != it->second) throw ChecksumError("checksum mismatch for " + path);
    Trajectory t;
    t.fields = io::read_frames(path, manifest_.grid.boundary);
    t.dt = manifest_.dt_sample;
    if (static_cast<int>(t.size()) != manifest_.frames_per_sim)
      throw FormatError(path + " holds " + std::to_string(t.size()) + " frames, manifest says " +
                        std::to_string(manifest_.frames_per_sim));
    if (t.fields.front().nx() != manifest_.grid.nx || t.fields.front().ny() != manifest_.grid.ny)
      throw FormatError(path + ": grid differs from the manifest");
    return t;
  }

  std::vector<Sample> samples(Split s) const {
    std::vector<Sample> out;
    for (int id : cases(s)) {
      auto frag = extract_fragments(trajectory(id), manifest_.fragments_per_sim, manifest_.n_in, manifest_.n_out,
                                    fragment_seed(manifest_, id), id);
      for (auto &smp : frag) out.push_back(std::move(smp));
    }
    return out;
  }

private:
  std::string dir_;
  DatasetManifest manifest_;
  std::map<std::string, std::string> sums_;
};

inline std::vector<Sample> load_samples(const std::string &dir, Split s) { return Dataset(dir).samples(s); }

} // namespace chno

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "calculus.hpp"
#include "errors.hpp"
#include "fourier.hpp"
#include "loglaplace.hpp"
#include "measure.hpp"
#include "simulator.hpp"

namespace mvlab {

inline constexpr const char* kArtifactVersion = "1.0.0";

using json = nlohmann::ordered_json;

/// Shortest round-trip decimal form. All numeric output funnels through
/// here so that reruns are byte-identical.
inline std::string fmt_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw IoError("bad numeric token '" + std::string(s) + "'");
  return v;
}

inline long long parse_int(std::string_view s) {
  long long v{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw IoError("bad integer token '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

// ---------------------------------------------------------------------------
// hashing

inline std::uint64_t fnv1a64(std::string_view data,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex16(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::string file_hash(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string() + " for hashing");
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (is.read(buf, sizeof buf) || is.gcount() > 0)
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(is.gcount())), h);
  return hex16(h);
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  return os;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw IoError("cannot open " + p.string() + " for reading");
  return is;
}

// ---------------------------------------------------------------------------
// CSV writers

/// Atom list with the total mass recorded up front as a comment line.
inline void write_measure_csv(std::ostream& os, const FiniteMeasure& m) {
  os << "# mass=" << fmt_double(m.total_mass()) << "\n";
  for (const Atom& a : m.atoms())
    os << fmt_double(a.position.x) << "," << fmt_double(a.weight) << "\n";
}

inline FiniteMeasure read_measure_csv(std::istream& is) {
  std::vector<Atom> atoms;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto cols = split_csv_line(line);
    if (cols.size() != 2) throw IoError("measure row needs position,weight");
    atoms.push_back(Atom{circle_point(parse_double(cols[0])), parse_double(cols[1])});
  }
  return FiniteMeasure(std::move(atoms));
}

/// Single row a0,a1,...,aK,b1,...,bK.
inline void write_field_csv(std::ostream& os, const FourierField& f) {
  os << fmt_double(f.a0);
  for (double v : f.ac) os << "," << fmt_double(v);
  for (double v : f.as) os << "," << fmt_double(v);
  os << "\n";
}

inline FourierField read_field_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty field file");
  auto cols = split_csv_line(line);
  if (cols.size() % 2 == 0)
    throw IoError("field row must have an odd column count (a0,a...,b...)");
  FourierField f;
  const std::size_t k = cols.size() / 2;
  f.a0 = parse_double(cols[0]);
  f.ac.resize(k);
  f.as.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    f.ac[i] = parse_double(cols[1 + i]);
    f.as[i] = parse_double(cols[1 + k + i]);
  }
  return f;
}

inline void write_path_csv(std::ostream& os, const MeasurePath& path) {
  os << "time,position,weight\n";
  for (std::size_t k = 0; k < path.snapshots.size(); ++k) {
    const std::string t = fmt_double(path.times[k]);
    for (const Atom& a : path.snapshots[k].atoms())
      os << t << "," << fmt_double(a.position.x) << "," << fmt_double(a.weight) << "\n";
  }
}

struct ReplicateSummaryRow {
  int replicate{0};
  double final_mass{0.0};
  bool extinct{false};
  double qv_phi0{0.0};  // empirical quadratic variation of the mass martingale
};

inline void write_replicate_summary_csv(std::ostream& os,
                                        const std::vector<ReplicateSummaryRow>& rows) {
  os << "replicate,final_mass,extinct,qv_phi0\n";
  for (const auto& r : rows)
    os << r.replicate << "," << fmt_double(r.final_mass) << ","
       << (r.extinct ? 1 : 0) << "," << fmt_double(r.qv_phi0) << "\n";
}

inline void write_reports_csv(std::ostream& os, const std::vector<ItoReport>& reports) {
  os << "replicate,functional,dt,lhs,term_time,term_gen,term_quad,term_mart,"
        "residual,residual_rel\n";
  for (const auto& r : reports)
    os << r.replicate << "," << r.functional << "," << fmt_double(r.dt) << ","
       << fmt_double(r.lhs) << "," << fmt_double(r.term_time) << ","
       << fmt_double(r.term_gen) << "," << fmt_double(r.term_quad) << ","
       << fmt_double(r.term_mart) << "," << fmt_double(r.residual) << ","
       << fmt_double(r.residual_rel) << "\n";
}

/// One row per stored time slice: s,a0,a1,...,aK,b1,...,bK.
inline void write_solution_csv(std::ostream& os, const LogLaplaceSolution& sol) {
  const int k = sol.n_modes;
  os << "s";
  os << ",a0";
  for (int i = 1; i <= k; ++i) os << ",a" << i;
  for (int i = 1; i <= k; ++i) os << ",b" << i;
  os << "\n";
  const double ds = sol.ds();
  for (std::size_t j = 0; j < sol.slices.size(); ++j) {
    const FourierField& f = sol.slices[j];
    os << fmt_double(static_cast<double>(j) * ds);
    os << "," << fmt_double(f.a0);
    for (double v : f.ac) os << "," << fmt_double(v);
    for (double v : f.as) os << "," << fmt_double(v);
    os << "\n";
  }
}

struct ConvergenceRow {
  int n{0};
  double mean_distance{0.0};
  double max_distance{0.0};
};

inline void write_convergence_csv(std::ostream& os,
                                  const std::vector<ConvergenceRow>& rows) {
  os << "n,mean_distance,max_distance\n";
  for (const auto& r : rows)
    os << r.n << "," << fmt_double(r.mean_distance) << ","
       << fmt_double(r.max_distance) << "\n";
}

// ---------------------------------------------------------------------------
// manifests

inline json params_to_json(const SimParams& p) {
  json j;
  j["n_particles"] = p.n_particles;
  j["c"] = p.c;
  j["T"] = p.T;
  j["dt"] = p.dt;
  j["initial_mass"] = p.initial_mass;
  j["seed"] = p.seed;
  j["init"] = p.init == SimParams::Init::kUniform ? "uniform" : "point";
  j["init_point"] = p.init_point;
  j["particle_cap"] = p.particle_cap;
  return j;
}

inline SimParams params_from_json(const json& j) {
  SimParams p;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& key = it.key();
    if (key == "n_particles") p.n_particles = it.value().get<int>();
    else if (key == "c") p.c = it.value().get<double>();
    else if (key == "T") p.T = it.value().get<double>();
    else if (key == "dt") p.dt = it.value().get<double>();
    else if (key == "initial_mass") p.initial_mass = it.value().get<double>();
    else if (key == "seed") p.seed = it.value().get<std::uint64_t>();
    else if (key == "init_point") p.init_point = it.value().get<double>();
    else if (key == "particle_cap") p.particle_cap = it.value().get<double>();
    else if (key == "init") {
      const std::string v = it.value().get<std::string>();
      if (v == "uniform") p.init = SimParams::Init::kUniform;
      else if (v == "point") p.init = SimParams::Init::kPoint;
      else throw ConfigError("init must be 'uniform' or 'point', got '" + v + "'");
    } else {
      throw ConfigError("unknown SimParams key '" + key + "'");
    }
  }
  return p;
}

/// Writes <dir>/manifest.json listing every named file with its content
/// hash. No timestamps anywhere: a rerun with the same config must
/// reproduce the manifest byte for byte. Call this last, after every
/// other file is on disk.
inline void write_manifest(const std::filesystem::path& dir, const json& meta,
                           const std::vector<std::string>& files) {
  json j;
  j["version"] = kArtifactVersion;
  for (auto it = meta.begin(); it != meta.end(); ++it) j[it.key()] = it.value();
  json fh;
  for (const std::string& name : files) fh[name] = file_hash(dir / name);
  j["files"] = fh;
  auto os = open_out(dir / "manifest.json");
  os << j.dump(2) << "\n";
}

struct ManifestCheck {
  bool ok{true};
  std::vector<std::string> problems;  // "missing <f>" or "hash mismatch <f>"
};

inline ManifestCheck check_manifest(const std::filesystem::path& dir) {
  auto is = open_in(dir / "manifest.json");
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw IoError("manifest.json is not valid JSON: " + std::string(e.what()));
  }
  if (!j.contains("files") || !j["files"].is_object())
    throw IoError("manifest.json has no files table");
  ManifestCheck out;
  for (auto it = j["files"].begin(); it != j["files"].end(); ++it) {
    const std::filesystem::path p = dir / it.key();
    if (!std::filesystem::exists(p)) {
      out.ok = false;
      out.problems.push_back("missing " + it.key());
      continue;
    }
    if (file_hash(p) != it.value().get<std::string>()) {
      out.ok = false;
      out.problems.push_back("hash mismatch " + it.key());
    }
  }
  return out;
}

}  // namespace mvlab

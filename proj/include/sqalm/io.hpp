#pragma once

// File formats used by the command-line tool.
//
// A problem is a JSON manifest plus raw arrays. Arrays are row-major,
// little-endian float64 with no header; their shapes live in the manifest.
// Wherever an array is expected the manifest may also hold it inline as a
// JSON list. Box bounds accept numbers, "inf"/"-inf", or lists of those.
//
//   {
//     "n": 2,
//     "objective": {"kind": "linear", "c": [1, 1]},
//     "box": {"lower": -1, "upper": 1},
//     "blocks": [{"m": 2, "k": 1, "A": "A0.bin", "b": "b0.bin"}],
//     "hash": "…"
//   }
//
// "kind" is "linear" or "quadratic" (with "hess"). The optional "hash" is
// the FNV-1a 64 digest of the problem data and is checked on load.

#include <Eigen/Dense>

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "json.hpp"
#include "sqalm/alm.hpp"
#include "sqalm/model.hpp"
#include "sqalm/instances.hpp"

namespace sqalm::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "binary arrays assume a little-endian host");

/// Parse or I/O failure; the message names the offending file or field.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::vector<double> read_blob(const fs::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected * sizeof(double)) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " float64 values, file has " +
                      std::to_string(bytes) + " bytes");
  }
  in.seekg(0);
  std::vector<double> v(expected);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw FormatError("read failed: " + path.string());
  return v;
}

inline void write_blob(const fs::path& path, const double* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw FormatError("write failed: " + path.string());
}

/// Incremental FNV-1a 64.
class Fnv1a64 {
 public:
  void update(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(const double* v, std::size_t count) { update(static_cast<const void*>(v), count * sizeof(double)); }
  void update(std::int64_t v) { update(&v, sizeof v); }
  std::string hex() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h_;
    return os.str();
  }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

/// Digest of the numerical content of a problem (shapes, data, bounds, k).
inline std::string problem_hash(const Problem<double>& p) {
  Fnv1a64 h;
  h.update(static_cast<std::int64_t>(p.n()));
  h.update(static_cast<std::int64_t>(p.objective.is_linear() ? 0 : 1));
  h.update(p.objective.c.data(), static_cast<std::size_t>(p.objective.c.size()));
  if (!p.objective.is_linear()) h.update(p.objective.hess.data(), static_cast<std::size_t>(p.objective.hess.size()));
  h.update(p.box.lower.data(), p.box.lower.size());
  h.update(p.box.upper.data(), p.box.upper.size());
  for (const auto& blk : p.blocks) {
    h.update(static_cast<std::int64_t>(blk.rows()));
    h.update(static_cast<std::int64_t>(blk.k));
    h.update(blk.A.data(), static_cast<std::size_t>(blk.A.size()));
    h.update(blk.b.data(), static_cast<std::size_t>(blk.b.size()));
  }
  return h.hex();
}

namespace detail {

inline void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw FormatError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw FormatError(where + ": unknown field '" + key + "'");
  }
}

inline const json& require(const json& obj, const char* key, const std::string& where) {
  const auto it = obj.find(key);
  if (it == obj.end()) throw FormatError(where + ": missing field '" + key + "'");
  return *it;
}

inline Index require_index(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number_integer()) throw FormatError(where + "." + key + ": expected an integer");
  return v.get<Index>();
}

inline double bound_value(const json& v, const std::string& where) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
  }
  throw FormatError(where + ": expected a number, \"inf\" or \"-inf\"");
}

inline std::vector<double> bounds(const json& v, Index n, const std::string& where) {
  if (v.is_array()) {
    if (static_cast<Index>(v.size()) != n) throw FormatError(where + ": expected " + std::to_string(n) + " entries");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(bound_value(v[i], where + "[" + std::to_string(i) + "]"));
    return out;
  }
  return std::vector<double>(static_cast<std::size_t>(n), bound_value(v, where));
}

inline std::vector<double> array(const json& v, std::size_t count, const fs::path& base, const std::string& where) {
  if (v.is_string()) {
    try {
      return read_blob(base / v.get<std::string>(), count);
    } catch (const FormatError& e) {
      throw FormatError(where + ": " + e.what());
    }
  }
  if (v.is_array()) {
    if (v.size() != count) throw FormatError(where + ": expected " + std::to_string(count) + " values");
    std::vector<double> out;
    for (const auto& x : v) {
      if (!x.is_number()) throw FormatError(where + ": non-numeric entry");
      out.push_back(x.get<double>());
    }
    return out;
  }
  throw FormatError(where + ": expected a file name or a list of numbers");
}

inline json bound_json(double v) {
  if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
  return v;
}

}  // namespace detail

struct LoadedProblem {
  Problem<double> problem;
  std::string hash;
  /// Optional witness point stored next to a generated problem.
  std::optional<Vector<double>> witness;
};

inline LoadedProblem load_problem(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open " + manifest_path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  const fs::path base = manifest_path.parent_path();
  detail::reject_unknown(j, {"n", "objective", "box", "blocks", "hash", "witness", "generator"}, "manifest");
  const Index n = detail::require_index(j, "n", "manifest");
  if (n < 1) throw FormatError("manifest.n: must be positive");
  const auto nn = static_cast<std::size_t>(n);

  LoadedProblem out;
  Problem<double>& p = out.problem;
  const json& obj = detail::require(j, "objective", "manifest");
  detail::reject_unknown(obj, {"kind", "c", "hess"}, "manifest.objective");
  const json& kind = detail::require(obj, "kind", "manifest.objective");
  const auto c = detail::array(detail::require(obj, "c", "manifest.objective"), nn, base, "manifest.objective.c");
  Vector<double> cv = Eigen::Map<const Vector<double>>(c.data(), n);
  if (kind == "linear") {
    if (obj.contains("hess")) throw FormatError("manifest.objective: 'hess' given for a linear objective");
    p.objective = Objective<double>::linear(cv);
  } else if (kind == "quadratic") {
    const auto h = detail::array(detail::require(obj, "hess", "manifest.objective"), nn, base, "manifest.objective.hess");
    try {
      p.objective = Objective<double>::diag_quadratic(Eigen::Map<const Vector<double>>(h.data(), n), cv);
    } catch (const std::invalid_argument& e) {
      throw FormatError(std::string("manifest.objective.hess: ") + e.what());
    }
  } else {
    throw FormatError("manifest.objective.kind: expected \"linear\" or \"quadratic\"");
  }

  if (j.contains("box")) {
    const json& box = j["box"];
    detail::reject_unknown(box, {"lower", "upper"}, "manifest.box");
    p.box.lower = detail::bounds(detail::require(box, "lower", "manifest.box"), n, "manifest.box.lower");
    p.box.upper = detail::bounds(detail::require(box, "upper", "manifest.box"), n, "manifest.box.upper");
  } else {
    p.box = Box<double>::unbounded(n);
  }

  const json& blocks = detail::require(j, "blocks", "manifest");
  if (!blocks.is_array()) throw FormatError("manifest.blocks: expected a list");
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    const std::string where = "manifest.blocks[" + std::to_string(l) + "]";
    const json& b = blocks[l];
    detail::reject_unknown(b, {"m", "k", "A", "b"}, where);
    const Index m = detail::require_index(b, "m", where);
    if (m < 1) throw FormatError(where + ".m: must be positive");
    ConstraintBlock<double> blk;
    blk.k = detail::require_index(b, "k", where);
    if (blk.k < 1 || blk.k > m) throw FormatError(where + ".k: must lie in [1, m]");
    const auto A = detail::array(detail::require(b, "A", where), static_cast<std::size_t>(m) * nn, base, where + ".A");
    blk.A = Eigen::Map<const RowMatrix<double>>(A.data(), m, n);
    const auto bv = detail::array(detail::require(b, "b", where), static_cast<std::size_t>(m), base, where + ".b");
    blk.b = Eigen::Map<const Vector<double>>(bv.data(), m);
    p.blocks.push_back(std::move(blk));
  }
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }

  out.hash = problem_hash(p);
  if (j.contains("hash")) {
    if (!j["hash"].is_string()) throw FormatError("manifest.hash: expected a string");
    if (j["hash"].get<std::string>() != out.hash) {
      throw FormatError("manifest.hash: data digest " + out.hash + " does not match " + j["hash"].get<std::string>());
    }
  }
  if (j.contains("witness")) {
    const auto w = detail::array(j["witness"], nn, base, "manifest.witness");
    out.witness = Eigen::Map<const Vector<double>>(w.data(), n);
  }
  return out;
}

/// Writes manifest.json and the arrays into `dir`.
inline fs::path save_problem(const fs::path& dir, const Problem<double>& p, const Vector<double>* witness = nullptr,
                             const json& generator = nullptr) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw FormatError("cannot create " + dir.string() + ": " + ec.message());
  json j;
  j["n"] = p.n();
  json obj;
  obj["kind"] = p.objective.is_linear() ? "linear" : "quadratic";
  write_blob(dir / "c.bin", p.objective.c.data(), static_cast<std::size_t>(p.n()));
  obj["c"] = "c.bin";
  if (!p.objective.is_linear()) {
    write_blob(dir / "hess.bin", p.objective.hess.data(), static_cast<std::size_t>(p.n()));
    obj["hess"] = "hess.bin";
  }
  j["objective"] = obj;
  json lo = json::array();
  json hi = json::array();
  for (std::size_t i = 0; i < p.box.lower.size(); ++i) {
    lo.push_back(detail::bound_json(p.box.lower[i]));
    hi.push_back(detail::bound_json(p.box.upper[i]));
  }
  j["box"] = {{"lower", lo}, {"upper", hi}};
  json blocks = json::array();
  for (std::size_t l = 0; l < p.blocks.size(); ++l) {
    const auto& blk = p.blocks[l];
    const std::string a = "A" + std::to_string(l) + ".bin";
    const std::string b = "b" + std::to_string(l) + ".bin";
    write_blob(dir / a, blk.A.data(), static_cast<std::size_t>(blk.A.size()));
    write_blob(dir / b, blk.b.data(), static_cast<std::size_t>(blk.b.size()));
    blocks.push_back({{"m", blk.rows()}, {"k", blk.k}, {"A", a}, {"b", b}});
  }
  j["blocks"] = blocks;
  if (witness) {
    write_blob(dir / "witness.bin", witness->data(), static_cast<std::size_t>(witness->size()));
    j["witness"] = "witness.bin";
  }
  if (!generator.is_null()) j["generator"] = generator;
  j["hash"] = problem_hash(p);
  const fs::path manifest = dir / "manifest.json";
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + manifest.string());
  out << j.dump(2) << '\n';
  return manifest;
}

inline json to_json(const Vector<double>& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector<double> vector_from(const json& j, const std::string& where) {
  if (!j.is_array()) throw FormatError(where + ": expected a list of numbers");
  Vector<double> v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw FormatError(where + ": non-numeric entry");
    v[static_cast<Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline json state_to_json(const IterateState<double>& s) {
  return {{"x", to_json(s.x)},   {"z", to_json(s.z)},           {"y", to_json(s.y)},
          {"lambda", to_json(s.lambda)}, {"mu", to_json(s.mu)}, {"sigma", s.sigma}};
}

inline IterateState<double> state_from_json(const json& j) {
  detail::reject_unknown(j, {"x", "z", "y", "lambda", "mu", "sigma"}, "state");
  IterateState<double> s;
  s.x = vector_from(detail::require(j, "x", "state"), "state.x");
  s.z = vector_from(detail::require(j, "z", "state"), "state.z");
  s.y = vector_from(detail::require(j, "y", "state"), "state.y");
  s.lambda = vector_from(detail::require(j, "lambda", "state"), "state.lambda");
  s.mu = vector_from(detail::require(j, "mu", "state"), "state.mu");
  const json& sg = detail::require(j, "sigma", "state");
  if (!sg.is_number()) throw FormatError("state.sigma: expected a number");
  s.sigma = sg.get<double>();
  return s;
}

inline IterateState<double> load_state(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return state_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline json residuals_json(const Residuals<double>& r) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(v > 0 ? "inf" : "-inf"); };
  return {{"eta", num(r.eta)},     {"eta_p", num(r.eta_p)}, {"eta_d", num(r.eta_d)},
          {"eta_r", num(r.eta_r)}, {"obj_p", num(r.obj_p)}, {"obj_d", num(r.obj_d)}};
}

/// Timing split, with each phase also given as a percentage of the total.
inline json timings_json(const SolveTimings& t) {
  const double total = t.total > 0 ? t.total : 1.0;
  const double other = std::max(0.0, t.total - t.sort - t.projection - t.gradient - t.linear_solve);
  return {{"total_seconds", t.total},
          {"sort_seconds", t.sort},
          {"projection_seconds", t.projection},
          {"gradient_seconds", t.gradient},
          {"linear_solve_seconds", t.linear_solve},
          {"other_seconds", other},
          {"sort_percent", 100.0 * t.sort / total},
          {"projection_percent", 100.0 * t.projection / total},
          {"gradient_percent", 100.0 * t.gradient / total},
          {"linear_solve_percent", 100.0 * t.linear_solve / total},
          {"other_percent", 100.0 * other / total},
          {"projections", t.projections},
          {"resorts", t.resorts}};
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  cells.push_back(cur);
  return cells;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Reads a CSV with a header row. `response` names the response column; all
/// other columns are features. Every cell must be numeric.
inline QrData<double> load_csv(const fs::path& path, const std::string& response) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file, a header row is required");
  std::vector<std::string> header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);
  std::size_t resp = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == response) resp = i;
  }
  if (resp == header.size()) throw FormatError(path.string() + ": no column named '" + response + "'");

  QrData<double> d;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i != resp) d.feature_names.push_back(header[i]);
  }
  std::vector<double> feats;
  std::vector<double> resp_values;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (detail::trim(line).empty() || detail::trim(line) == "\r") continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != header.size()) {
      throw FormatError(path.string() + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                        " cells, header has " + std::to_string(header.size()));
    }
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::string cell = detail::trim(cells[i]);
      double v = 0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(v)) {
        throw FormatError(path.string() + ": row " + std::to_string(row) + ", column '" + header[i] +
                          "': non-numeric value '" + cell + "'");
      }
      if (i == resp) {
        resp_values.push_back(v);
      } else {
        feats.push_back(v);
      }
    }
  }
  const auto m = static_cast<Index>(resp_values.size());
  const auto n = static_cast<Index>(header.size() - 1);
  if (m == 0) throw FormatError(path.string() + ": no data rows");
  d.response = Eigen::Map<const Vector<double>>(resp_values.data(), m);
  d.features = Eigen::Map<const RowMatrix<double>>(feats.data(), m, n);
  return d;
}

}  // namespace sqalm::io

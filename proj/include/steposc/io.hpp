#pragma once

// File formats: CSV tables, flat binary fields with a text sidecar, JSON lines,
// SHA-256 manifests and spectrum ingestion.

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "steposc/classical.hpp"
#include "steposc/error.hpp"
#include "steposc/grid.hpp"
#include "steposc/spectral_stats.hpp"
#include "steposc/wavefn.hpp"

namespace steposc::io {

namespace fs = std::filesystem;

/// Shortest round-trip decimal form; locale independent.
inline std::string num(double x) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    if (std::strtod(buf, nullptr) == x) break;
  }
  return buf;
}

inline std::ofstream open_out(const fs::path& p, bool binary = false) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, binary ? std::ios::binary : std::ios::out);
  if (!f) throw Error("cannot write " + p.string());
  return f;
}

// ---------------------------------------------------------------------------
// Checksums

inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IngestionError("cannot read " + p.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

inline std::string sha256_file(const fs::path& p) { return sha256_hex(read_file(p)); }

// ---------------------------------------------------------------------------
// Tables

inline void write_trajectory_csv(const fs::path& p, const classical::Trajectory& tr) {
  auto f = open_out(p);
  f << "t,q1,q2,p1,p2,event\n";
  for (const auto& s : tr.samples) {
    f << num(s.state.t) << ',' << num(s.state.q1) << ',' << num(s.state.q2) << ',' << num(s.state.p1) << ','
      << num(s.state.p2) << ',' << classical::to_string(s.event) << '\n';
  }
}

inline void write_ladder_csv(const fs::path& p, const std::vector<double>& ladder) {
  auto f = open_out(p);
  f << "k,E_pred\n";
  for (std::size_t k = 0; k < ladder.size(); ++k) f << k << ',' << num(ladder[k]) << '\n';
}

inline void write_weyl_csv(const fs::path& p, const std::vector<std::pair<double, double>>& curve) {
  auto f = open_out(p);
  f << "E,N_weyl\n";
  for (const auto& [E, N] : curve) f << num(E) << ',' << num(N) << '\n';
}

inline void write_spectrum_csv(const fs::path& p, const std::vector<double>& values,
                               const std::vector<double>& residuals) {
  auto f = open_out(p);
  f << "index,eigenvalue,residual\n";
  for (std::size_t k = 0; k < values.size(); ++k) {
    f << k << ',' << num(values[k]) << ',' << (k < residuals.size() ? num(residuals[k]) : std::string("nan")) << '\n';
  }
}

inline void write_spacing_csv(const fs::path& p, const std::vector<double>& spacings) {
  auto d = stats::spacing_distribution(spacings);
  auto f = open_out(p);
  f << "s,cdf_emp,cdf_poisson,cdf_sp,cdf_goe\n";
  for (std::size_t i = 0; i < d.sorted.size(); ++i) {
    if (i + 1 < d.sorted.size() && d.sorted[i + 1] == d.sorted[i]) continue;
    const double s = d.sorted[i];
    f << num(s) << ',' << num(static_cast<double>(i + 1) / static_cast<double>(d.sorted.size())) << ','
      << num(stats::reference_cdf(stats::Law::poisson, s)) << ','
      << num(stats::reference_cdf(stats::Law::semi_poisson, s)) << ','
      << num(stats::reference_cdf(stats::Law::goe_wigner, s)) << '\n';
  }
}

inline void write_histogram_csv(const fs::path& p, const std::vector<double>& spacings) {
  auto d = stats::spacing_distribution(spacings);
  auto f = open_out(p);
  f << "s,pdf_emp,pdf_poisson,pdf_sp,pdf_goe\n";
  for (std::size_t b = 0; b < d.density.size(); ++b) {
    const double s = (static_cast<double>(b) + 0.5) * d.bin_width;
    f << num(s) << ',' << num(d.density[b]) << ',' << num(stats::reference_pdf(stats::Law::poisson, s)) << ','
      << num(stats::reference_pdf(stats::Law::semi_poisson, s)) << ','
      << num(stats::reference_pdf(stats::Law::goe_wigner, s)) << '\n';
  }
}

struct MixingRow {
  double x_scaled, P, T;
  int N;
  double eps1, eps2;
};

inline void write_mixing_csv(const fs::path& p, const std::vector<MixingRow>& rows) {
  auto f = open_out(p);
  f << "x_scaled,P,T,N,eps1,eps2\n";
  for (const auto& r : rows) {
    f << num(r.x_scaled) << ',' << num(r.P) << ',' << num(r.T) << ',' << r.N << ',' << num(r.eps1) << ','
      << num(r.eps2) << '\n';
  }
}

inline void write_census_jsonl(const fs::path& p, const std::vector<wavefn::ConcentrationReport>& reports) {
  auto f = open_out(p);
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["n"] = r.n;
    j["E"] = r.energy;
    j["e_tilde"] = r.e_tilde;
    j["argmax_q1"] = r.argmax_q1;
    j["argmax_q2"] = r.argmax_q2;
    j["label"] = r.concentrated ? "concentrated" : "delocalized";
    j["product"] = r.product;
    f << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Fields

/// Columns of `fields` as consecutive little-endian float64 blocks in row-major
/// grid order, plus `<path>.txt` describing the layout.
inline void write_fields(const fs::path& p, const fd::Grid2D& g, const Eigen::MatrixXd& fields,
                         const std::vector<int>& labels = {}) {
  {
    auto f = open_out(p, true);
    f.write(reinterpret_cast<const char*>(fields.data()),
            static_cast<std::streamsize>(fields.size() * static_cast<Eigen::Index>(sizeof(double))));
  }
  auto s = open_out(fs::path(p.string() + ".txt"));
  s << "format float64-le\n";
  s << "ordering row-major index=j2*n1+j1 (q1 fastest)\n";
  s << "n1 " << g.x1.n << "\nn2 " << g.x2.n << '\n';
  s << "q1_first " << num(g.x1.node(0)) << "\nq1_last " << num(g.x1.node(g.x1.n - 1)) << "\nh1 " << num(g.x1.h)
    << '\n';
  s << "q2_first " << num(g.x2.node(0)) << "\nq2_last " << num(g.x2.node(g.x2.n - 1)) << "\nh2 " << num(g.x2.h)
    << '\n';
  s << "count " << fields.cols() << '\n';
  if (!labels.empty()) {
    s << "labels";
    for (int l : labels) s << ' ' << l;
    s << '\n';
  }
}

struct FieldStore {
  fd::Grid2D grid;
  Eigen::MatrixXd fields;
  std::vector<int> labels;
};

inline FieldStore read_fields(const fs::path& p) {
  std::ifstream s(p.string() + ".txt");
  if (!s) throw IngestionError("missing sidecar " + p.string() + ".txt");
  FieldStore st;
  double q1f = 0, q2f = 0;
  long count = -1;
  std::string key;
  while (s >> key) {
    if (key == "n1") s >> st.grid.x1.n;
    else if (key == "n2") s >> st.grid.x2.n;
    else if (key == "h1") s >> st.grid.x1.h;
    else if (key == "h2") s >> st.grid.x2.h;
    else if (key == "q1_first") s >> q1f;
    else if (key == "q2_first") s >> q2f;
    else if (key == "count") s >> count;
    else if (key == "labels") {
      std::string line;
      std::getline(s, line);
      std::istringstream ls(line);
      for (int l; ls >> l;) st.labels.push_back(l);
    } else {
      std::string rest;
      std::getline(s, rest);
    }
  }
  if (count < 0 || st.grid.x1.n <= 0 || st.grid.x2.n <= 0) throw IngestionError("incomplete sidecar for " + p.string());
  st.grid.x1.lo = q1f - st.grid.x1.h;
  st.grid.x2.lo = q2f - st.grid.x2.h;
  const auto bytes = read_file(p);
  const auto rows = static_cast<Eigen::Index>(st.grid.size());
  if (bytes.size() != static_cast<std::size_t>(rows * count) * sizeof(double)) {
    throw IngestionError("field file size does not match its sidecar: " + p.string());
  }
  st.fields.resize(rows, count);
  std::memcpy(st.fields.data(), bytes.data(), bytes.size());
  return st;
}

// ---------------------------------------------------------------------------
// Manifests and ingestion

inline constexpr const char* kManifestName = "manifest.json";

/// Checks `file` against the manifest in its directory. Without a manifest the
/// file is treated as third-party input unless `require_manifest` is set.
inline void verify_against_manifest(const fs::path& file, bool require_manifest) {
  const auto man = file.parent_path() / kManifestName;
  if (!fs::exists(man)) {
    if (require_manifest) throw IngestionError("no manifest next to " + file.string());
    return;
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(man));
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("unreadable manifest " + man.string() + ": " + e.what());
  }
  const auto name = file.filename().string();
  if (!j.contains("files") || !j["files"].is_array()) throw IngestionError("manifest lacks a file list: " + man.string());
  for (const auto& e : j["files"]) {
    if (e.value("name", "") != name) continue;
    if (!e.contains("sha256")) throw IngestionError("manifest entry for " + name + " has no checksum");
    if (e["sha256"].get<std::string>() != sha256_file(file)) throw IngestionError("checksum mismatch for " + name);
    return;
  }
  throw IngestionError("manifest " + man.string() + " does not list " + name);
}

/// Reads `index,eigenvalue[,residual]` CSV (header required), sorted by index.
inline std::vector<double> read_spectrum_csv(const fs::path& p, bool require_manifest = false) {
  if (!fs::exists(p)) throw IngestionError("no such spectrum file: " + p.string());
  verify_against_manifest(p, require_manifest);
  std::ifstream f(p);
  std::string line;
  if (!std::getline(f, line)) throw IngestionError("empty spectrum file: " + p.string());
  if (line.rfind("index,eigenvalue", 0) != 0) {
    throw IngestionError(p.string() + ": expected header 'index,eigenvalue[,residual]', got '" + line + "'");
  }
  std::vector<std::pair<long, double>> rows;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b;
    if (!std::getline(ls, a, ',') || !std::getline(ls, b, ',')) {
      throw IngestionError(p.string() + ":" + std::to_string(lineno) + ": expected two comma-separated fields");
    }
    try {
      std::size_t ua = 0, ub = 0;
      const long idx = std::stol(a, &ua);
      const double v = std::stod(b, &ub);
      if (ua != a.size() || ub != b.size() || !std::isfinite(v)) throw std::invalid_argument("trailing");
      rows.emplace_back(idx, v);
    } catch (const std::exception&) {
      throw IngestionError(p.string() + ":" + std::to_string(lineno) + ": malformed row '" + line + "'");
    }
  }
  if (rows.size() < 2) throw IngestionError(p.string() + ": need at least 2 levels");
  std::sort(rows.begin(), rows.end());
  std::vector<double> out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && rows[i].first == rows[i - 1].first) throw IngestionError(p.string() + ": duplicate index");
    out.push_back(rows[i].second);
  }
  if (!std::is_sorted(out.begin(), out.end())) throw IngestionError(p.string() + ": eigenvalues not ascending");
  return out;
}

}  // namespace steposc::io

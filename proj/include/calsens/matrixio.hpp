#pragma once

#include <calsens/common.hpp>
#include <calsens/config.hpp>
#include <calsens/sensitivity.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace calsens {

// ---------------------------------------------------------------------------
// CSV matrices: header row of column names, leading column of row names,
// values at full precision (17 significant digits)
// ---------------------------------------------------------------------------

struct NamedMatrix {
  Matrix value;
  std::vector<std::string> row_names, col_names;
};

namespace detail {

inline std::string strip_ws(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(line);
  while (std::getline(in, item, ',')) out.push_back(strip_ws(item));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline std::vector<std::string> default_names(const std::string& prefix, Eigen::Index n) {
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i + 1));
  return out;
}

inline std::vector<std::string> names_or_default(const std::vector<std::string>& names,
                                                 const std::string& prefix, Eigen::Index n) {
  if (!names.empty()) return names;
  return default_names(prefix, n);
}

}  // namespace detail

inline void write_matrix_csv(const NamedMatrix& m, std::ostream& os) {
  require(static_cast<Eigen::Index>(m.row_names.size()) == m.value.rows(),
          "write_matrix_csv: row name count mismatch");
  require(static_cast<Eigen::Index>(m.col_names.size()) == m.value.cols(),
          "write_matrix_csv: column name count mismatch");
  os << "name";
  for (const auto& c : m.col_names) os << "," << c;
  os << "\n";
  for (Eigen::Index i = 0; i < m.value.rows(); ++i) {
    os << m.row_names[static_cast<size_t>(i)];
    for (Eigen::Index j = 0; j < m.value.cols(); ++j) os << "," << format_full(m.value(i, j));
    os << "\n";
  }
}

inline void write_matrix_csv(const NamedMatrix& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw LoadError("cannot open for writing: " + path);
  write_matrix_csv(m, f);
}

inline NamedMatrix read_matrix_csv(std::istream& is, const std::string& origin) {
  std::string line;
  if (!std::getline(is, line)) throw LoadError(origin + ": empty matrix file");
  const auto header = detail::split_csv_line(line);
  if (header.size() < 2) throw LoadError(origin + ":1: header must name at least one column");

  NamedMatrix m;
  m.col_names.assign(header.begin() + 1, header.end());
  const size_t n_cols = m.col_names.size();

  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::strip_ws(line).empty()) continue;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != n_cols + 1)
      throw LoadError(origin + ":" + std::to_string(lineno) + ": expected " +
                      std::to_string(n_cols + 1) + " cells, got " + std::to_string(cells.size()));
    m.row_names.push_back(cells[0]);
    std::vector<double> row(n_cols);
    for (size_t j = 0; j < n_cols; ++j) {
      const std::string& cell = cells[j + 1];
      char* end = nullptr;
      row[j] = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str() || *end != '\0')
        throw LoadError(origin + ":" + std::to_string(lineno) + ": column " +
                        std::to_string(j + 2) + ": unparseable number '" + cell + "'");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw LoadError(origin + ": matrix has no data rows");
  m.value.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_cols));
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < n_cols; ++j)
      m.value(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

inline NamedMatrix read_matrix_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw LoadError("cannot open matrix file: " + path);
  return read_matrix_csv(f, path);
}

// ---------------------------------------------------------------------------
// manifest: one structured text file naming the parameter/moment lists, the
// evaluation point, and relative paths to the matrix CSVs
// ---------------------------------------------------------------------------

struct LoadedManifest {
  MomentBundle bundle;
  std::optional<QoIJacobians> qoi;
};

namespace detail {

inline std::vector<std::string> split_names(const std::string& raw) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(raw);
  while (std::getline(in, item, ',')) {
    const std::string t = strip_ws(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

inline std::string join_names(const std::vector<std::string>& names) {
  std::string out;
  for (size_t i = 0; i < names.size(); ++i) {
    if (i) out += ", ";
    out += names[i];
  }
  return out;
}

inline std::string join_values(const Vector& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format_full(v[i]);
  }
  return out;
}

inline Vector parse_values(const Config& cfg, const std::string& key) {
  const std::vector<double> xs = cfg.get_list("points", key);
  Vector v(static_cast<Eigen::Index>(xs.size()));
  for (size_t i = 0; i < xs.size(); ++i) v[static_cast<Eigen::Index>(i)] = xs[i];
  return v;
}

inline Matrix load_shaped(const std::filesystem::path& dir, const std::string& rel,
                          Eigen::Index rows, Eigen::Index cols, const std::string& what) {
  const std::string path = (dir / rel).string();
  const NamedMatrix m = read_matrix_csv(path);
  if (m.value.rows() != rows || m.value.cols() != cols)
    throw LoadError(path + ": " + what + " must be " + std::to_string(rows) + "x" +
                    std::to_string(cols) + ", got " + std::to_string(m.value.rows()) + "x" +
                    std::to_string(m.value.cols()));
  return m.value;
}

}  // namespace detail

// writes manifest.cfg plus one CSV per matrix under dir; returns the manifest
// path
inline std::string save_manifest(const MomentBundle& bundle,
                                 const QoIJacobians* qoi,
                                 const std::string& dir,
                                 const std::string& manifest_name = "manifest.cfg") {
  bundle.validate();
  if (qoi) qoi->validate();
  namespace fs = std::filesystem;
  const fs::path out_dir(dir);
  fs::create_directories(out_dir);

  const auto J = bundle.n_moments();
  const auto K = bundle.n_theta();
  const auto L = bundle.n_gamma();
  const auto theta_names = detail::names_or_default(bundle.theta_names, "theta", K);
  const auto gamma_names = detail::names_or_default(bundle.gamma_names, "gamma", L);
  const auto moment_names = detail::names_or_default(bundle.moment_names, "m", J);

  Config cfg;
  cfg.set("shapes", "n_moments", std::to_string(J));
  cfg.set("shapes", "n_theta", std::to_string(K));
  cfg.set("shapes", "n_gamma", std::to_string(L));
  cfg.set("names", "theta", detail::join_names(theta_names));
  cfg.set("names", "gamma", detail::join_names(gamma_names));
  cfg.set("names", "moments", detail::join_names(moment_names));
  cfg.set("points", "theta_hat", detail::join_values(bundle.theta_hat));
  cfg.set("points", "gamma_hat", detail::join_values(bundle.gamma_hat));
  cfg.set("matrices", "g", "g.csv");
  cfg.set("matrices", "G", "G.csv");
  cfg.set("matrices", "W", "W.csv");
  cfg.set("matrices", "D", "D.csv");

  write_matrix_csv(NamedMatrix{bundle.g, moment_names, {"g"}}, (out_dir / "g.csv").string());
  write_matrix_csv(NamedMatrix{bundle.G, moment_names, theta_names},
                   (out_dir / "G.csv").string());
  write_matrix_csv(NamedMatrix{bundle.W, moment_names, moment_names},
                   (out_dir / "W.csv").string());
  write_matrix_csv(NamedMatrix{bundle.D, moment_names, gamma_names},
                   (out_dir / "D.csv").string());

  if (bundle.c_theta) {
    cfg.set("matrices", "c_theta", "c_theta.csv");
    cfg.set("matrices", "c_gamma", "c_gamma.csv");
    const auto stacked = detail::default_names("r", J * K);
    write_matrix_csv(NamedMatrix{*bundle.c_theta, stacked, theta_names},
                     (out_dir / "c_theta.csv").string());
    write_matrix_csv(NamedMatrix{*bundle.c_gamma, stacked, gamma_names},
                     (out_dir / "c_gamma.csv").string());
  }

  if (qoi) {
    const auto F = qoi->A.rows();
    const auto h_names = detail::names_or_default(qoi->h_names, "h", F);
    cfg.set("shapes", "n_h", std::to_string(F));
    cfg.set("names", "h", detail::join_names(h_names));
    cfg.set("points", "h_hat", detail::join_values(qoi->h_hat));
    cfg.set("matrices", "A", "A.csv");
    cfg.set("matrices", "B", "B.csv");
    write_matrix_csv(NamedMatrix{qoi->A, h_names, gamma_names}, (out_dir / "A.csv").string());
    write_matrix_csv(NamedMatrix{qoi->B, h_names, theta_names}, (out_dir / "B.csv").string());
  }

  const std::string manifest_path = (out_dir / manifest_name).string();
  std::ofstream f(manifest_path);
  if (!f) throw LoadError("cannot open for writing: " + manifest_path);
  f << cfg.to_string();
  return manifest_path;
}

inline LoadedManifest load_manifest(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const Config cfg = Config::parse_file(manifest_path);
  const fs::path dir = fs::path(manifest_path).parent_path();

  LoadedManifest out;
  MomentBundle& b = out.bundle;
  b.theta_names = detail::split_names(cfg.get_string("names", "theta", ""));
  b.gamma_names = detail::split_names(cfg.get_string("names", "gamma", ""));
  b.moment_names = detail::split_names(cfg.get_string("names", "moments", ""));
  b.theta_hat = detail::parse_values(cfg, "theta_hat");
  b.gamma_hat = detail::parse_values(cfg, "gamma_hat");

  const auto K = b.theta_hat.size();
  const auto L = b.gamma_hat.size();
  if (K == 0) throw LoadError(manifest_path + ": theta_hat must not be empty");
  if (L == 0) throw LoadError(manifest_path + ": gamma_hat must not be empty");

  const NamedMatrix g_mat = read_matrix_csv((dir / cfg.get_string("matrices", "g")).string());
  if (g_mat.value.cols() != 1)
    throw LoadError(manifest_path + ": g must be a single-column matrix");
  b.g = g_mat.value.col(0);
  const auto J = b.g.size();

  if (cfg.has("shapes", "n_moments") && cfg.get_long("shapes", "n_moments", J) != J)
    throw LoadError(manifest_path + ": declared n_moments does not match g");
  if (cfg.has("shapes", "n_theta") && cfg.get_long("shapes", "n_theta", K) != K)
    throw LoadError(manifest_path + ": declared n_theta does not match theta_hat");
  if (cfg.has("shapes", "n_gamma") && cfg.get_long("shapes", "n_gamma", L) != L)
    throw LoadError(manifest_path + ": declared n_gamma does not match gamma_hat");

  b.G = detail::load_shaped(dir, cfg.get_string("matrices", "G"), J, K, "G");
  b.W = detail::load_shaped(dir, cfg.get_string("matrices", "W"), J, J, "W");
  b.D = detail::load_shaped(dir, cfg.get_string("matrices", "D"), J, L, "D");

  const std::string w_path = (dir / cfg.get_string("matrices", "W")).string();
  for (Eigen::Index i = 0; i < J; ++i)
    if (b.W(i, i) < 0.0)
      throw LoadError(w_path + ": negative weighting diagonal at row " + std::to_string(i + 1));
  const double w_scale = std::max(1.0, b.W.cwiseAbs().maxCoeff());
  if ((b.W - b.W.transpose()).cwiseAbs().maxCoeff() > 1e-8 * w_scale)
    throw LoadError(w_path + ": weighting matrix is not symmetric");

  if (cfg.has("matrices", "c_theta") || cfg.has("matrices", "c_gamma")) {
    if (!(cfg.has("matrices", "c_theta") && cfg.has("matrices", "c_gamma")))
      throw LoadError(manifest_path + ": c_theta and c_gamma must be supplied together");
    b.c_theta = detail::load_shaped(dir, cfg.get_string("matrices", "c_theta"), J * K, K,
                                    "c_theta");
    b.c_gamma = detail::load_shaped(dir, cfg.get_string("matrices", "c_gamma"), J * K, L,
                                    "c_gamma");
  }

  try {
    b.validate();
  } catch (const std::invalid_argument& err) {
    throw LoadError(manifest_path + ": " + err.what());
  }

  if (cfg.has("matrices", "A") || cfg.has("matrices", "B")) {
    if (!(cfg.has("matrices", "A") && cfg.has("matrices", "B")))
      throw LoadError(manifest_path + ": A and B must be supplied together");
    QoIJacobians q;
    q.h_names = detail::split_names(cfg.get_string("names", "h", ""));
    if (!cfg.has("points", "h_hat"))
      throw LoadError(manifest_path + ": h_hat required when A and B are supplied");
    q.h_hat = detail::parse_values(cfg, "h_hat");
    const auto F = q.h_hat.size();
    q.A = detail::load_shaped(dir, cfg.get_string("matrices", "A"), F, L, "A");
    q.B = detail::load_shaped(dir, cfg.get_string("matrices", "B"), F, K, "B");
    try {
      q.validate();
    } catch (const std::invalid_argument& err) {
      throw LoadError(manifest_path + ": " + err.what());
    }
    out.qoi = std::move(q);
  }
  return out;
}

// ---------------------------------------------------------------------------
// report tables: side-by-side method panels, 3-decimal fixed formatting,
// undefined entries rendered "n/a"
// ---------------------------------------------------------------------------

enum class TableFormat { csv, markdown };

struct NamedTable {
  std::string title;  // panel label, e.g. "Approximation"
  Matrix value;
  BoolGrid defined;   // false (or non-finite value) renders as "n/a"
};

// panel with every finite entry defined
inline NamedTable make_panel(const std::string& title, const Matrix& value) {
  NamedTable t;
  t.title = title;
  t.value = value;
  t.defined = value.array().isFinite();
  return t;
}

inline NamedTable derivative_panel(const SensitivityResult& r, const std::string& title) {
  return make_panel(title, r.S);
}

inline NamedTable elasticity_panel(const SensitivityResult& r, const std::string& title) {
  NamedTable t = make_panel(title, r.E.value);
  t.defined = t.defined && r.E.defined;
  return t;
}

namespace detail {

inline std::string format_cell(double v, bool defined) {
  if (!defined || !std::isfinite(v)) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

inline std::string emit_table(const std::vector<NamedTable>& panels,
                              const std::vector<std::string>& row_names,
                              const std::vector<std::string>& col_labels, TableFormat fmt) {
  const auto R = static_cast<Eigen::Index>(row_names.size());
  for (const auto& p : panels) {
    require(p.value.rows() == R, "emit table: panel row count must match row names");
    require(p.value.cols() == static_cast<Eigen::Index>(col_labels.size()),
            "emit table: panel column count must match column labels");
    require(p.defined.rows() == p.value.rows() && p.defined.cols() == p.value.cols(),
            "emit table: defined mask shape mismatch");
  }

  std::vector<std::string> header;
  header.push_back("name");
  for (const auto& p : panels)
    for (const auto& c : col_labels)
      header.push_back(p.title.empty() ? c : p.title + " " + c);

  std::ostringstream os;
  const char* sep = fmt == TableFormat::csv ? "," : " | ";
  const auto emit_row = [&](const std::vector<std::string>& cells) {
    if (fmt == TableFormat::markdown) os << "| ";
    for (size_t i = 0; i < cells.size(); ++i) {
      if (i) os << sep;
      os << cells[i];
    }
    if (fmt == TableFormat::markdown) os << " |";
    os << "\n";
  };

  emit_row(header);
  if (fmt == TableFormat::markdown) {
    std::vector<std::string> rule(header.size(), "---");
    emit_row(rule);
  }
  if (header.size() == 1) return os.str();  // no value columns: header-only table
  for (Eigen::Index i = 0; i < R; ++i) {
    std::vector<std::string> cells;
    cells.push_back(row_names[static_cast<size_t>(i)]);
    for (const auto& p : panels)
      for (Eigen::Index j = 0; j < p.value.cols(); ++j)
        cells.push_back(format_cell(p.value(i, j), p.defined(i, j)));
    emit_row(cells);
  }
  return os.str();
}

}  // namespace detail

// rows = parameter (or quantity) names, columns = calibrated-parameter names,
// one column block per panel
inline std::string emit_elasticity_table(const std::vector<NamedTable>& panels,
                                         const std::vector<std::string>& row_names,
                                         const std::vector<std::string>& col_names,
                                         TableFormat fmt = TableFormat::csv) {
  return detail::emit_table(panels, row_names, col_names, fmt);
}

// rows = parameter (or quantity) names, columns = percent bumps, one column
// block per supplied panel; panels not supplied are simply absent
inline std::string emit_extrapolation_table(const std::vector<NamedTable>& panels,
                                            const std::vector<std::string>& row_names,
                                            const std::vector<double>& percents,
                                            TableFormat fmt = TableFormat::csv) {
  std::vector<std::string> col_labels;
  for (double p : percents) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g%%", p);
    col_labels.push_back(buf);
  }
  return detail::emit_table(panels, row_names, col_labels, fmt);
}

}  // namespace calsens

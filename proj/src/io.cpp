#include "ebmf/io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ebmf {

namespace {

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(std::string_view(line).substr(start, pos == std::string::npos ? pos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd vector_field(const nlohmann::json& j, const char* key, Eigen::Index expected) {
  const auto v = j.at(key).get<std::vector<double>>();
  if (expected >= 0 && static_cast<Eigen::Index>(v.size()) != expected)
    throw ParseError(std::string("fit file: field '") + key + "' has length " +
                     std::to_string(v.size()) + ", expected " + std::to_string(expected));
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

MatrixFormat format_for_path(const std::string& path) {
  auto ends_with = [&](const std::string& suf) {
    return path.size() >= suf.size() && path.compare(path.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends_with(".tsv") || ends_with(".tab") || ends_with(".txt")) return MatrixFormat::Tsv;
  return MatrixFormat::Csv;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

MatrixData parse_matrix(const std::string& text, MatrixFormat format, VarStructure var_structure) {
  const char sep = format == MatrixFormat::Csv ? ',' : '\t';
  std::vector<std::vector<double>> rows;
  std::vector<std::vector<bool>> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line, sep);
    if (!rows.empty() && fields.size() != rows.front().size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(rows.front().size()) + " fields, found " +
                       std::to_string(fields.size()));
    std::vector<double> values(fields.size(), 0.0);
    std::vector<bool> obs(fields.size(), false);
    for (std::size_t c = 0; c < fields.size(); ++c) {
      const std::string& f = fields[c];
      if (f.empty() || f == "NA") continue;
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v))
        throw ParseError("line " + std::to_string(line_no) + ", column " + std::to_string(c + 1) +
                         ": cannot parse '" + f + "' as a number");
      values[c] = v;
      obs[c] = true;
    }
    rows.push_back(std::move(values));
    seen.push_back(std::move(obs));
  }
  if (rows.empty()) throw ParseError("empty matrix");
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto p = static_cast<Eigen::Index>(rows.front().size());
  Eigen::MatrixXd values(n, p);
  Mask observed(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) {
      values(i, j) = rows[i][j];
      observed(i, j) = seen[i][j];
    }
  return MatrixData(std::move(values), std::move(observed), var_structure);
}

MatrixData read_matrix(const std::string& path, MatrixFormat format, VarStructure var_structure) {
  return parse_matrix(read_text(path), format, var_structure);
}

MatrixData read_matrix(const std::string& path) { return read_matrix(path, format_for_path(path)); }

std::string format_matrix(const Eigen::MatrixXd& values, const Mask& observed, MatrixFormat format) {
  const char sep = format == MatrixFormat::Csv ? ',' : '\t';
  std::string out;
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      if (j > 0) out += sep;
      out += observed(i, j) ? format_double(values(i, j)) : "NA";
    }
    out += '\n';
  }
  return out;
}

void write_matrix(const std::string& path, const Eigen::MatrixXd& values, const Mask& observed,
                  MatrixFormat format) {
  write_text(path, format_matrix(values, observed, format));
}

void write_matrix(const std::string& path, const Eigen::MatrixXd& values) {
  write_matrix(path, values, Mask::Constant(values.rows(), values.cols(), true), format_for_path(path));
}

nlohmann::json fit_to_json(const FitResult& fit, bool include_second_moments) {
  nlohmann::json j;
  j["format"] = "ebmf-fit";
  j["version"] = kFitFormatVersion;
  j["n"] = fit.n;
  j["p"] = fit.p;
  j["K"] = fit.K();
  j["prior_family"] = to_string(fit.prior_family);
  j["var_structure"] = to_string(fit.prec.var_structure);
  j["precision"] = {{"tau_scalar", fit.prec.tau_scalar},
                    {"tau_col", to_vector(fit.prec.tau_col)},
                    {"tau_row", to_vector(fit.prec.tau_row)},
                    {"clamped", fit.prec.clamped}};
  j["objective"] = fit.objective;
  j["objective_trace"] = fit.objective_trace;
  j["segment_starts"] = fit.segment_starts;
  j["pve"] = fit.pve;
  j["column_means"] = to_vector(fit.column_means);
  j["second_moments"] = include_second_moments;
  auto factors = nlohmann::json::array();
  for (const auto& f : fit.moments.factors) {
    nlohmann::json fj;
    fj["l_mean"] = to_vector(f.l_mean);
    fj["f_mean"] = to_vector(f.f_mean);
    if (include_second_moments) {
      fj["l_mean2"] = to_vector(f.l_mean2);
      fj["f_mean2"] = to_vector(f.f_mean2);
    }
    fj["prior_l"] = to_json(f.prior_l);
    fj["prior_f"] = to_json(f.prior_f);
    fj["kl_l"] = f.kl_l;
    fj["kl_f"] = f.kl_f;
    factors.push_back(std::move(fj));
  }
  j["factors"] = std::move(factors);
  return j;
}

FitResult fit_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object() || j.value("format", "") != "ebmf-fit")
      throw ParseError("fit file: not an ebmf fit");
    const int version = j.at("version").get<int>();
    if (version != kFitFormatVersion)
      throw ParseError("fit file: unsupported version " + std::to_string(version));
    FitResult fit;
    fit.n = j.at("n").get<Eigen::Index>();
    fit.p = j.at("p").get<Eigen::Index>();
    if (fit.n < 1 || fit.p < 1) throw ParseError("fit file: bad dimensions");
    fit.prior_family = prior_family_from_string(j.at("prior_family").get<std::string>());
    const auto& pj = j.at("precision");
    fit.prec.var_structure = var_structure_from_string(j.at("var_structure").get<std::string>());
    fit.prec.tau_scalar = pj.at("tau_scalar").get<double>();
    fit.prec.tau_col = vector_field(pj, "tau_col", -1);
    fit.prec.tau_row = vector_field(pj, "tau_row", -1);
    fit.prec.clamped = pj.value("clamped", false);
    if (fit.prec.var_structure == VarStructure::ByColumn && fit.prec.tau_col.size() != fit.p)
      throw ParseError("fit file: tau_col length does not match p");
    if (fit.prec.var_structure == VarStructure::ByRow && fit.prec.tau_row.size() != fit.n)
      throw ParseError("fit file: tau_row length does not match n");
    fit.objective = j.at("objective").get<double>();
    fit.objective_trace = j.at("objective_trace").get<std::vector<double>>();
    fit.segment_starts = j.value("segment_starts", std::vector<std::size_t>{});
    fit.pve = j.at("pve").get<std::vector<double>>();
    fit.column_means = vector_field(j, "column_means", -1);
    if (fit.column_means.size() != 0 && fit.column_means.size() != fit.p)
      throw ParseError("fit file: column_means length does not match p");
    fit.moments = MomentSet(fit.n, fit.p);
    const auto& factors = j.at("factors");
    if (!factors.is_array()) throw ParseError("fit file: 'factors' must be an array");
    if (j.at("K").get<std::size_t>() != factors.size())
      throw ParseError("fit file: K does not match the number of factors");
    for (const auto& fj : factors) {
      FactorMoments f;
      f.l_mean = vector_field(fj, "l_mean", fit.n);
      f.f_mean = vector_field(fj, "f_mean", fit.p);
      f.l_mean2 = fj.contains("l_mean2") ? vector_field(fj, "l_mean2", fit.n)
                                         : Eigen::VectorXd(f.l_mean.array().square());
      f.f_mean2 = fj.contains("f_mean2") ? vector_field(fj, "f_mean2", fit.p)
                                         : Eigen::VectorXd(f.f_mean.array().square());
      f.prior_l = prior_from_json(fj.at("prior_l"));
      f.prior_f = prior_from_json(fj.at("prior_f"));
      f.kl_l = fj.at("kl_l").get<double>();
      f.kl_f = fj.at("kl_f").get<double>();
      fit.moments.factors.push_back(std::move(f));
    }
    if (fit.pve.size() != fit.moments.K()) throw ParseError("fit file: pve length does not match K");
    return fit;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("fit file: schema error: ") + e.what());
  } catch (const EbnmError& e) {
    throw ParseError(std::string("fit file: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("fit file: ") + e.what());
  }
}

void write_fit(const FitResult& fit, const std::string& path, bool include_second_moments) {
  write_text(path, fit_to_json(fit, include_second_moments).dump(1) + "\n");
}

FitResult read_fit(const std::string& path) {
  const std::string text = read_text(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("fit file: invalid JSON: ") + e.what());
  }
  return fit_from_json(j);
}

CellList read_cells(const std::string& path) {
  CellList cells;
  std::istringstream in(read_text(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (line_no == 1 && (t[0] < '0' || t[0] > '9')) continue;  // header
    const auto fields = split(t, t.find('\t') != std::string::npos ? '\t' : ',');
    if (fields.size() != 2) throw ParseError("cells line " + std::to_string(line_no) + ": expected 'row,col'");
    long long idx[2];
    for (int c = 0; c < 2; ++c) {
      const auto& f = fields[static_cast<std::size_t>(c)];
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), idx[c]);
      if (ec != std::errc() || ptr != f.data() + f.size() || idx[c] < 0)
        throw ParseError("cells line " + std::to_string(line_no) + ": bad index '" + f + "'");
    }
    cells.emplace_back(static_cast<Eigen::Index>(idx[0]), static_cast<Eigen::Index>(idx[1]));
  }
  return cells;
}

void write_cells(const std::string& path, const CellList& cells) {
  std::string out = "row,col\n";
  for (auto [i, j] : cells) out += std::to_string(i) + "," + std::to_string(j) + "\n";
  write_text(path, out);
}

std::string format_plan(const OcvPlan& plan) {
  std::string out = "axis,index,group,k,seed\n";
  for (std::size_t i = 0; i < plan.row_groups.size(); ++i)
    out += "row," + std::to_string(i) + "," + std::to_string(plan.row_groups[i]) + "," +
           std::to_string(plan.k) + "," + std::to_string(plan.seed) + "\n";
  for (std::size_t j = 0; j < plan.col_groups.size(); ++j)
    out += "col," + std::to_string(j) + "," + std::to_string(plan.col_groups[j]) + "," +
           std::to_string(plan.k) + "," + std::to_string(plan.seed) + "\n";
  return out;
}

void write_plan(const std::string& path, const OcvPlan& plan) { write_text(path, format_plan(plan)); }

}  // namespace ebmf

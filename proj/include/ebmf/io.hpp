#pragma once

#include "ebmf/factor_core.hpp"
#include "ebmf/fit.hpp"
#include "ebmf/ocv.hpp"

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace ebmf {

enum class MatrixFormat { Csv, Tsv };

// Infers the format from the extension (.tsv/.tab/.txt are tab separated).
MatrixFormat format_for_path(const std::string& path);

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numeric matrix without a header; missing cells are "NA" or empty fields.
MatrixData parse_matrix(const std::string& text, MatrixFormat format,
                        VarStructure var_structure = VarStructure::ByColumn);
MatrixData read_matrix(const std::string& path, MatrixFormat format,
                       VarStructure var_structure = VarStructure::ByColumn);
MatrixData read_matrix(const std::string& path);

std::string format_matrix(const Eigen::MatrixXd& values, const Mask& observed, MatrixFormat format);
void write_matrix(const std::string& path, const Eigen::MatrixXd& values, const Mask& observed,
                  MatrixFormat format);
void write_matrix(const std::string& path, const Eigen::MatrixXd& values);

inline constexpr int kFitFormatVersion = 1;

nlohmann::json fit_to_json(const FitResult& fit, bool include_second_moments = true);
FitResult fit_from_json(const nlohmann::json& j);
void write_fit(const FitResult& fit, const std::string& path, bool include_second_moments = true);
FitResult read_fit(const std::string& path);

using CellList = std::vector<std::pair<Eigen::Index, Eigen::Index>>;

// "row,col" lines (0-based); an optional header line is skipped.
CellList read_cells(const std::string& path);
void write_cells(const std::string& path, const CellList& cells);

// Fold assignment for reproducibility: one line per row/column group label.
std::string format_plan(const OcvPlan& plan);
void write_plan(const std::string& path, const OcvPlan& plan);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

}  // namespace ebmf

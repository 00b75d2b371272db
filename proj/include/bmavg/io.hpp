#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bmavg::io {

inline constexpr int kFormatVersion = 1;
inline constexpr int kSignificantDigits = 12;

/// x rounded to 12 significant digits (the artifact serialization precision).
double round_sig(double x);
std::string format_number(double x);

/// Numeric CSV rows. A first row that does not parse as numbers is skipped as a header.
std::vector<std::vector<double>> read_csv(const std::filesystem::path& path);
/// A single-column (or single-row) CSV flattened to a vector.
std::vector<double> read_csv_vector(const std::filesystem::path& path);

void write_csv(const std::filesystem::path& path, const Eigen::MatrixXd& m);
void write_csv_column(const std::filesystem::path& path, std::span<const double> v);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace bmavg::io

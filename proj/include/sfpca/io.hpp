#pragma once

#include "sfpca/fit.hpp"
#include "sfpca/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace sfpca {

// Reads curves from CSV with header id,t,y,z[,sd]. Rows are grouped by id in
// order of first appearance and sorted by time within a curve. Malformed rows,
// a covariate that changes within an id, or a partially filled sd column
// raise DataError with the line number.
std::vector<FunctionalSample> read_samples_csv(std::istream& in, const std::string& source = "<input>");
std::vector<FunctionalSample> read_samples_csv_file(const std::string& path);

// Writes id,t,y,z[,sd]. When fill_sd > 0 every row gets that sd unless the
// curve carries its own; otherwise the sd column is written only when every
// curve has one.
void write_samples_csv(std::ostream& out, const std::vector<FunctionalSample>& samples,
                       double fill_sd = 0.0);
void write_samples_csv_file(const std::string& path, const std::vector<FunctionalSample>& samples,
                            double fill_sd = 0.0);

// Text model format with a version tag and a trailing FNV-1a checksum of the
// body. Doubles are written with 17 significant digits, so save -> load ->
// save is byte-identical.
std::string serialize_model(const FittedModel& model);
FittedModel deserialize_model(const std::string& text);
void save_model(const std::string& path, const FittedModel& model);
FittedModel load_model(const std::string& path);

std::uint64_t fnv1a64(std::string_view data);

// key = value lines; '#' starts a comment. Keys use dashes as on the command line.
std::map<std::string, std::string> read_config_file(const std::string& path);

// Writes the optimizer trace as iter,block,objective.
void write_trace_csv(const std::string& path, const FitDiagnostics& diagnostics);

std::string format_double(double x);

} // namespace sfpca

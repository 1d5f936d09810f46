#ifndef PSIM_CSV_HPP
#define PSIM_CSV_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace psim::csv {

// Reads a comma-separated numeric table. A single leading header line is
// skipped if its first field is not a number. Throws ConfigError on ragged
// rows or non-numeric fields.
std::vector<std::vector<double>> read_numeric(std::istream& is, std::size_t n_cols,
                                              const std::string& what);
std::vector<std::vector<double>> read_numeric_file(const std::string& path, std::size_t n_cols);

// "%.10g" formatting, locale-independent.
std::string format_double(double v);

} // namespace psim::csv

#endif

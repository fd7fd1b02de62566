#pragma once

#include <string>
#include <string_view>

namespace ivpb {

/// 64-bit FNV-1a hash of the bytes, as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);

std::string read_file(const std::string& path);
/// Writes the bytes, creating parent directories as needed.
void write_file(const std::string& path, std::string_view bytes);

/// Appends raw little-endian doubles.
void append_doubles(std::string& out, const double* data, std::size_t n);

/// Sequential reader over a byte buffer written with append_doubles.
class DoubleReader {
public:
    explicit DoubleReader(std::string_view bytes) : bytes_(bytes) {}
    double next();
    void read(double* data, std::size_t n);
    bool done() const { return pos_ == bytes_.size(); }

private:
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

/// Shortest text that parses back to the same double.
std::string format_double(double x);

} // namespace ivpb

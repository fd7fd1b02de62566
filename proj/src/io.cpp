#include "ivpb/io.hpp"

#include "ivpb/grid.hpp"

#include <charconv>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ivpb {

std::string fnv1a_hex(std::string_view bytes)
{
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InvalidArgument("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::string& path, std::string_view bytes)
{
    const std::filesystem::path p(path);
    if (p.has_parent_path())
        std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw NumericalError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw NumericalError("write failed for " + path);
}

void append_doubles(std::string& out, const double* data, std::size_t n)
{
    static_assert(sizeof(double) == 8);
    const std::size_t old = out.size();
    out.resize(old + 8 * n);
    std::memcpy(out.data() + old, data, 8 * n);
}

double DoubleReader::next()
{
    double x;
    read(&x, 1);
    return x;
}

void DoubleReader::read(double* data, std::size_t n)
{
    if (pos_ + 8 * n > bytes_.size())
        throw InvalidArgument("binary snapshot is truncated");
    std::memcpy(data, bytes_.data() + pos_, 8 * n);
    pos_ += 8 * n;
}

std::string format_double(double x)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, r.ptr);
}

} // namespace ivpb

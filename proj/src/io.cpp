#include <safe/error.hpp>
#include <safe/io.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

namespace safe::io {

template <typename T>
T read_le(std::span<const std::uint8_t> in, std::size_t& offset) {
    if (offset + sizeof(T) > in.size()) throw PayloadError("truncated buffer");
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, in.data() + offset, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    offset += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
}

template std::uint8_t read_le<std::uint8_t>(std::span<const std::uint8_t>, std::size_t&);
template std::uint32_t read_le<std::uint32_t>(std::span<const std::uint8_t>, std::size_t&);
template std::uint64_t read_le<std::uint64_t>(std::span<const std::uint8_t>, std::size_t&);
template std::int32_t read_le<std::int32_t>(std::span<const std::uint8_t>, std::size_t&);
template std::int64_t read_le<std::int64_t>(std::span<const std::uint8_t>, std::size_t&);
template float read_le<float>(std::span<const std::uint8_t>, std::size_t&);
template double read_le<double>(std::span<const std::uint8_t>, std::size_t&);

void append_string(Bytes& out, std::string_view s) {
    append_le<std::uint32_t>(out, std::uint32_t(s.size()));
    out.insert(out.end(), s.begin(), s.end());
}

std::string read_string(std::span<const std::uint8_t> in, std::size_t& offset) {
    const auto n = read_le<std::uint32_t>(in, offset);
    if (offset + n > in.size()) throw PayloadError("truncated string");
    std::string s(reinterpret_cast<const char*>(in.data() + offset), n);
    offset += n;
    return s;
}

Bytes read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(f), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open " + path.string());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << text;
}

std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
    std::uint64_t h = seed;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t fnv1a(std::string_view text) {
    return fnv1a(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

}  // namespace safe::io

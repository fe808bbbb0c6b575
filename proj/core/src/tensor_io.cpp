#include "rfa/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace rfa {

static const char kMagic[8] = {'R', 'F', 'A', 'T', 'N', 'S', 'R', '\0'};

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

static void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

static uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    check(static_cast<bool>(is), "tensor container truncated while reading a u32");
    return v;
}

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write(kMagic, 8);
    write_u32(os, static_cast<uint32_t>(t.rank()));
    for (int64_t e : t.shape) write_u32(os, static_cast<uint32_t>(e));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    check(static_cast<bool>(os), "tensor container write failed");
}

Tensor read_tensor(std::istream& is) {
    char magic[8];
    is.read(magic, 8);
    check(static_cast<bool>(is) && std::memcmp(magic, kMagic, 8) == 0,
          "bad tensor container magic, expected RFATNSR");
    uint32_t rank = read_u32(is);
    check(rank >= 1 && rank <= 4, "tensor container rank out of range: " + std::to_string(rank));
    Shape shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = read_u32(is);
    Tensor t = zeros(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    check(static_cast<bool>(is), "tensor container truncated while reading payload");
    return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    check(os.is_open(), "cannot open " + path + " for writing");
    write_tensor(os, t);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.is_open(), "cannot open " + path);
    return read_tensor(is);
}

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& sections) {
    std::ofstream os(path, std::ios::binary);
    check(os.is_open(), "cannot open " + path + " for writing");
    for (const auto& [name, tensor] : sections) {
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor(os, tensor);
    }
}

std::map<std::string, Tensor> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    check(is.is_open(), "cannot open " + path);
    std::map<std::string, Tensor> out;
    while (is.peek() != std::char_traits<char>::eof()) {
        uint32_t len = read_u32(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        check(static_cast<bool>(is), "checkpoint truncated while reading a section name");
        Tensor t = read_tensor(is);
        check(out.emplace(std::move(name), std::move(t)).second,
              "duplicate checkpoint section");
    }
    return out;
}

} // namespace rfa

#include "bevpred/btf.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace bevpred {

namespace {

const std::uint8_t kMagic[4] = {0x42, 0x54, 0x46, 0x31}; // "BTF1"

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

} // namespace

std::vector<std::uint8_t> encode_btf(const Tensor& t) {
    if (t.empty()) {
        throw std::invalid_argument("cannot encode empty tensor");
    }
    std::vector<std::uint8_t> out;
    const std::size_t elem = t.dtype() == Dtype::F32 ? 4 : 8;
    out.reserve(4 + 4 + 4 * t.rank() + 1 + elem * t.numel());
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.dims()) {
        put_u32(out, static_cast<std::uint32_t>(d));
    }
    out.push_back(static_cast<std::uint8_t>(t.dtype()));
    if (t.dtype() == Dtype::F32) {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const float f = static_cast<float>(t[i]);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    } else {
        for (std::size_t i = 0; i < t.numel(); ++i) {
            const double d = t[i];
            std::uint64_t bits;
            std::memcpy(&bits, &d, 8);
            put_u32(out, static_cast<std::uint32_t>(bits & 0xFFFFFFFFull));
            put_u32(out, static_cast<std::uint32_t>(bits >> 32));
        }
    }
    return out;
}

Tensor decode_btf(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 9 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw std::runtime_error("not a BTF v1 stream");
    }
    std::size_t pos = 4;
    const std::uint32_t rank = get_u32(bytes.data() + pos);
    pos += 4;
    if (rank == 0 || rank > 16) {
        throw std::runtime_error("BTF rank out of range");
    }
    if (bytes.size() < pos + 4 * rank + 1) {
        throw std::runtime_error("truncated BTF header");
    }
    std::vector<std::size_t> dims(rank);
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        dims[i] = get_u32(bytes.data() + pos);
        pos += 4;
        if (dims[i] == 0) {
            throw std::runtime_error("BTF extent must be >= 1");
        }
        numel *= dims[i];
    }
    const std::uint8_t tag = bytes[pos++];
    if (tag > 1) {
        throw std::runtime_error("unknown BTF dtype tag");
    }
    const Dtype dtype = static_cast<Dtype>(tag);
    const std::size_t elem = dtype == Dtype::F32 ? 4 : 8;
    if (bytes.size() != pos + numel * elem) {
        throw std::runtime_error("BTF payload length mismatch");
    }
    std::vector<double> values(numel);
    if (dtype == Dtype::F32) {
        for (std::size_t i = 0; i < numel; ++i) {
            const std::uint32_t bits = get_u32(bytes.data() + pos + 4 * i);
            float f;
            std::memcpy(&f, &bits, 4);
            values[i] = static_cast<double>(f);
        }
    } else {
        for (std::size_t i = 0; i < numel; ++i) {
            const std::uint64_t lo = get_u32(bytes.data() + pos + 8 * i);
            const std::uint64_t hi = get_u32(bytes.data() + pos + 8 * i + 4);
            const std::uint64_t bits = lo | (hi << 32);
            double d;
            std::memcpy(&d, &bits, 8);
            values[i] = d;
        }
    }
    return Tensor::from_values(std::move(dims), std::move(values), dtype);
}

void write_btf(const std::string& path, const Tensor& t) {
    const std::vector<std::uint8_t> bytes = encode_btf(t);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) {
        throw std::runtime_error("write failed: " + path);
    }
}

Tensor read_btf(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw std::runtime_error("cannot open: " + path);
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    return decode_btf(bytes);
}

} // namespace bevpred

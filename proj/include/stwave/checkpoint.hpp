#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "stwave/error.hpp"
#include "stwave/tensor.hpp"

namespace stwave {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

// Versioned binary container for named parameter tensors.
// Layout (all integers little-endian):
//   magic "STWCKPT\0" | u32 version | u32 precision_bytes
//   u64 config_len | config bytes (UTF-8, opaque to this module)
//   u32 record_count
//   per record: u32 name_len | name | u32 rank | u64 extents[rank] | payload
//   u64 FNV-1a checksum over everything after the magic
// Round-trips are bit-exact: payloads are the raw IEEE-754 words.
namespace ckpt {

constexpr char kMagic[8] = {'S', 'T', 'W', 'C', 'K', 'P', 'T', '\0'};
constexpr uint32_t kVersion = 1;

struct Record {
    std::string name;
    Shape shape;
    std::vector<std::byte> payload;
};

struct File {
    uint32_t precision_bytes = 0;
    std::string config_text;
    std::vector<Record> records;
};

inline uint64_t fnv1a(const std::byte* p, size_t n, uint64_t h = 0xCBF29CE484222325ull) {
    for (size_t i = 0; i < n; ++i) {
        h ^= static_cast<uint64_t>(p[i]);
        h *= 0x100000001B3ull;
    }
    return h;
}

namespace detail {

class Writer {
public:
    void raw(const void* p, size_t n) {
        const std::byte* b = static_cast<const std::byte*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    template <typename U>
    void num(U v) {
        raw(&v, sizeof(U));
    }
    const std::vector<std::byte>& bytes() const { return buf_; }

private:
    std::vector<std::byte> buf_;
};

class Reader {
public:
    Reader(const std::vector<std::byte>& b, std::string path) : buf_(b), path_(std::move(path)) {}
    void raw(void* p, size_t n) {
        if (pos_ + n > buf_.size())
            throw IoError("checkpoint '" + path_ + "' is truncated (wanted " + std::to_string(n) +
                          " bytes at offset " + std::to_string(pos_) + ")");
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }
    template <typename U>
    U num() {
        U v;
        raw(&v, sizeof(U));
        return v;
    }
    size_t pos() const { return pos_; }
    size_t size() const { return buf_.size(); }

private:
    const std::vector<std::byte>& buf_;
    std::string path_;
    size_t pos_ = 0;
};

} // namespace detail

inline void write_file(const std::filesystem::path& path, const File& f) {
    detail::Writer w;
    w.num(kVersion);
    w.num(f.precision_bytes);
    w.num(static_cast<uint64_t>(f.config_text.size()));
    w.raw(f.config_text.data(), f.config_text.size());
    w.num(static_cast<uint32_t>(f.records.size()));
    for (const Record& r : f.records) {
        w.num(static_cast<uint32_t>(r.name.size()));
        w.raw(r.name.data(), r.name.size());
        w.num(static_cast<uint32_t>(r.shape.size()));
        for (int64_t e : r.shape) w.num(static_cast<uint64_t>(e));
        int64_t want = shape_numel(r.shape) * static_cast<int64_t>(f.precision_bytes);
        if (static_cast<int64_t>(r.payload.size()) != want)
            throw ContractError("checkpoint record '" + r.name + "': payload size " +
                                std::to_string(r.payload.size()) + " != shape size " +
                                std::to_string(want));
        w.raw(r.payload.data(), r.payload.size());
    }
    uint64_t sum = fnv1a(w.bytes().data(), w.bytes().size());

    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw IoError("cannot open '" + tmp.string() + "' for writing");
        os.write(kMagic, sizeof(kMagic));
        os.write(reinterpret_cast<const char*>(w.bytes().data()),
                 static_cast<std::streamsize>(w.bytes().size()));
        os.write(reinterpret_cast<const char*>(&sum), sizeof(sum));
        if (!os) throw IoError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move checkpoint into place at '" + path.string() + "': " + ec.message());
}

inline File read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint '" + path.string() + "'");
    std::vector<std::byte> all;
    {
        is.seekg(0, std::ios::end);
        auto n = is.tellg();
        is.seekg(0);
        all.resize(static_cast<size_t>(n));
        is.read(reinterpret_cast<char*>(all.data()), n);
        if (!is) throw IoError("read failed for '" + path.string() + "'");
    }
    if (all.size() < sizeof(kMagic) + sizeof(uint64_t) ||
        std::memcmp(all.data(), kMagic, sizeof(kMagic)) != 0)
        throw IoError("'" + path.string() + "' is not a checkpoint (bad magic)");

    size_t body = all.size() - sizeof(kMagic) - sizeof(uint64_t);
    uint64_t stored;
    std::memcpy(&stored, all.data() + sizeof(kMagic) + body, sizeof(stored));
    uint64_t actual = fnv1a(all.data() + sizeof(kMagic), body);
    if (stored != actual)
        throw IoError("checkpoint '" + path.string() + "' failed its checksum (corrupt or truncated)");

    std::vector<std::byte> bodyv(all.begin() + sizeof(kMagic), all.end() - sizeof(uint64_t));
    detail::Reader r(bodyv, path.string());
    uint32_t version = r.num<uint32_t>();
    if (version != kVersion)
        throw IoError("checkpoint '" + path.string() + "' has unsupported version " +
                      std::to_string(version));
    File f;
    f.precision_bytes = r.num<uint32_t>();
    if (f.precision_bytes != 4 && f.precision_bytes != 8)
        throw IoError("checkpoint '" + path.string() + "' has invalid precision tag " +
                      std::to_string(f.precision_bytes));
    uint64_t clen = r.num<uint64_t>();
    f.config_text.resize(static_cast<size_t>(clen));
    r.raw(f.config_text.data(), static_cast<size_t>(clen));
    uint32_t count = r.num<uint32_t>();
    for (uint32_t i = 0; i < count; ++i) {
        Record rec;
        uint32_t nl = r.num<uint32_t>();
        rec.name.resize(nl);
        r.raw(rec.name.data(), nl);
        uint32_t rank = r.num<uint32_t>();
        rec.shape.resize(rank);
        for (uint32_t d = 0; d < rank; ++d) rec.shape[d] = static_cast<int64_t>(r.num<uint64_t>());
        check_shape_valid(rec.shape);
        size_t bytes = static_cast<size_t>(shape_numel(rec.shape)) * f.precision_bytes;
        rec.payload.resize(bytes);
        r.raw(rec.payload.data(), bytes);
        f.records.push_back(std::move(rec));
    }
    if (r.pos() != r.size())
        throw IoError("checkpoint '" + path.string() + "' has " +
                      std::to_string(r.size() - r.pos()) + " trailing bytes");
    return f;
}

} // namespace ckpt

// Typed save/load. Loading demands a precision match so a training-precision
// checkpoint is never silently widened or narrowed.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const std::string& config_text,
                     const std::vector<std::pair<std::string, Tensor<T>>>& tensors) {
    ckpt::File f;
    f.precision_bytes = sizeof(T);
    f.config_text = config_text;
    for (const auto& [name, t] : tensors) {
        ckpt::Record r;
        r.name = name;
        r.shape = t.shape();
        r.payload.resize(static_cast<size_t>(t.size()) * sizeof(T));
        std::memcpy(r.payload.data(), t.data().data(), r.payload.size());
        f.records.push_back(std::move(r));
    }
    ckpt::write_file(path, f);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> load_checkpoint(const std::filesystem::path& path,
                                                               std::string* config_text) {
    ckpt::File f = ckpt::read_file(path);
    if (f.precision_bytes != sizeof(T))
        throw ConfigError("checkpoint '" + path.string() + "' stores " +
                          std::to_string(f.precision_bytes * 8) + "-bit floats but " +
                          std::to_string(sizeof(T) * 8) + "-bit were requested");
    if (config_text) *config_text = f.config_text;
    std::vector<std::pair<std::string, Tensor<T>>> out;
    for (const auto& r : f.records) {
        std::vector<T> data(static_cast<size_t>(shape_numel(r.shape)));
        std::memcpy(data.data(), r.payload.data(), r.payload.size());
        out.emplace_back(r.name, Tensor<T>::from_data(r.shape, std::move(data)));
    }
    return out;
}

} // namespace stwave

#pragma once

// Little-endian binary containers shared by the graph, weight, flow and model
// file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "sgcn/core.hpp"

namespace sgcn::io {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

class Writer {
public:
    template <class T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        const auto* p = reinterpret_cast<const char*>(&value);
        buf_.insert(buf_.end(), p, p + sizeof(T));
    }

    void magic(std::string_view tag) { buf_.insert(buf_.end(), tag.begin(), tag.end()); }

    void bytes(const std::vector<char>& data) { buf_.insert(buf_.end(), data.begin(), data.end()); }

    /// u64 length prefix followed by raw bytes.
    void blob(const std::vector<char>& data) {
        put<std::uint64_t>(data.size());
        bytes(data);
    }

    void str(std::string_view s) {
        put<std::uint64_t>(s.size());
        buf_.insert(buf_.end(), s.begin(), s.end());
    }

    const std::vector<char>& data() const noexcept { return buf_; }
    std::vector<char> take() noexcept { return std::move(buf_); }

private:
    std::vector<char> buf_;
};

class Reader {
public:
    explicit Reader(const std::vector<char>& data) : data_(data) {}

    template <class T>
        requires std::is_arithmetic_v<T>
    T get() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    void expect_magic(std::string_view tag) {
        need(tag.size());
        if (std::string_view(data_.data() + pos_, tag.size()) != tag)
            throw FormatError("bad magic: expected \"" + std::string(tag) + "\"");
        pos_ += tag.size();
    }

    std::vector<char> blob() {
        const auto n = get<std::uint64_t>();
        need(n);
        std::vector<char> out(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                              data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }

    std::string str() {
        const auto n = get<std::uint64_t>();
        need(n);
        std::string out(data_.data() + pos_, n);
        pos_ += n;
        return out;
    }

    bool at_end() const noexcept { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size()) throw FormatError("truncated binary container");
    }

    const std::vector<char>& data_;
    std::size_t pos_ = 0;
};

inline void write_file(const std::string& path, const std::vector<char>& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path);
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw DataError("write failed: " + path);
}

inline std::vector<char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open for reading: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace sgcn::io

#pragma once

#include <cstdint>
#include <string>
#include <type_traits>

#include "rmnet/errors.hpp"

namespace rmnet::detail {

template <typename T>
void put_le(std::string& out, T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

// Sequential little-endian reader; running out of bytes raises a LoadError
// that names `context` and the field being read.
class ByteReader {
public:
    ByteReader(const std::string& bytes, std::string context) : bytes_(bytes), context_(std::move(context)) {}

    bool done() const { return pos_ == bytes_.size(); }

    template <typename T>
    T get(const std::string& what) {
        need(sizeof(T), what);
        T value = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            value |= static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(T);
        return value;
    }

    std::string take(std::size_t n, const std::string& what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n, const std::string& what) const {
        if (bytes_.size() - pos_ < n) throw LoadError(context_ + " truncated while reading " + what);
    }

    const std::string& bytes_;
    std::string context_;
    std::size_t pos_ = 0;
};

}  // namespace rmnet::detail

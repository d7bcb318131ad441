#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "usae/errors.hpp"

namespace usae::io {

// Little-endian byte sink. All on-disk formats in this project share the
// layout: 4-byte magic, u16 version, then format-specific fields.
class ByteWriter {
public:
    template <typename T>
        requires std::is_arithmetic_v<T>
    void put(T value) {
        std::array<unsigned char, sizeof(T)> raw{};
        std::memcpy(raw.data(), &value, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
        bytes_.insert(bytes_.end(), raw.begin(), raw.end());
    }

    void put_magic(std::string_view magic) { bytes_.insert(bytes_.end(), magic.begin(), magic.end()); }

    // u32 length prefix followed by the raw UTF-8 bytes.
    void put_string(std::string_view s) {
        put(static_cast<std::uint32_t>(s.size()));
        bytes_.insert(bytes_.end(), s.begin(), s.end());
    }

    template <typename T>
    void put_array(const T* data, std::size_t count) {
        if constexpr (std::endian::native == std::endian::little) {
            const auto* p = reinterpret_cast<const unsigned char*>(data);
            bytes_.insert(bytes_.end(), p, p + count * sizeof(T));
        } else {
            for (std::size_t i = 0; i < count; ++i) put(data[i]);
        }
    }

    const std::vector<unsigned char>& bytes() const noexcept { return bytes_; }

    void save(const std::filesystem::path& path) const;

private:
    std::vector<unsigned char> bytes_;
};

// Bounds-checked little-endian reader; every failure reports its byte offset.
class ByteReader {
public:
    explicit ByteReader(std::vector<unsigned char> bytes) : bytes_(std::move(bytes)) {}

    static ByteReader load(const std::filesystem::path& path);

    template <typename T>
        requires std::is_arithmetic_v<T>
    T get(const char* field) {
        require(sizeof(T), field);
        std::array<unsigned char, sizeof(T)> raw{};
        std::memcpy(raw.data(), bytes_.data() + pos_, sizeof(T));
        if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
        pos_ += sizeof(T);
        T value;
        std::memcpy(&value, raw.data(), sizeof(T));
        return value;
    }

    void expect_magic(std::string_view magic) {
        require(magic.size(), "magic");
        if (std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0)
            throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", pos_);
        pos_ += magic.size();
    }

    std::string get_string(const char* field) {
        const auto n = get<std::uint32_t>(field);
        require(n, field);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    template <typename T>
    void get_array(T* out, std::size_t count, const char* field) {
        if (count > remaining() / sizeof(T)) {
            throw FormatError(std::string("truncated ") + field + ": need " + std::to_string(count * sizeof(T)) +
                                  " bytes, have " + std::to_string(remaining()),
                              pos_);
        }
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(out, bytes_.data() + pos_, count * sizeof(T));
            pos_ += count * sizeof(T);
        } else {
            for (std::size_t i = 0; i < count; ++i) out[i] = get<T>(field);
        }
    }

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

    void expect_end() const {
        if (pos_ != bytes_.size())
            throw FormatError(std::to_string(remaining()) + " trailing bytes after payload", pos_);
    }

private:
    void require(std::size_t n, const char* field) const {
        if (n > remaining()) throw FormatError(std::string("truncated while reading ") + field, pos_);
    }

    std::vector<unsigned char> bytes_;
    std::size_t pos_ = 0;
};

std::vector<unsigned char> read_binary_file(const std::filesystem::path& path);
void write_binary_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);

// Entire text file; IoError naming the path on failure.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace usae::io

#pragma once

// Little-endian binary helpers for the on-disk formats (graph, embeddings,
// checkpoints). All three share the layout
//   magic[4] | u64 header_bytes | JSON header | payload

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace quadgfm::io {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class ByteWriter {
public:
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const std::uint8_t*>(data);
        buf_.insert(buf_.end(), p, p + n);
    }
    void text(std::string_view s) { bytes(s.data(), s.size()); }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

    const std::vector<std::uint8_t>& buffer() const { return buf_; }
    void write_file(const std::filesystem::path& path) const;

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(std::vector<std::uint8_t> data, std::string origin)
        : data_(std::move(data)), origin_(std::move(origin)) {}
    static ByteReader from_file(const std::filesystem::path& path);

    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) {
            throw FormatError(origin_ + ": truncated file (needed " + std::to_string(n) +
                              " bytes at offset " + std::to_string(pos_) + ")");
        }
    }
    std::string text(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    const std::string& origin() const { return origin_; }

private:
    std::vector<std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::string origin_;
};

// magic + length-prefixed JSON header.
void write_header(ByteWriter& out, std::string_view magic, const nlohmann::json& header);
nlohmann::json read_header(ByteReader& in, std::string_view magic);

}  // namespace quadgfm::io

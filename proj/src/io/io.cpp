#include <fstream>
#include <iterator>

#include "quadgfm/io/binary.hpp"
#include "quadgfm/io/jsonl.hpp"

namespace quadgfm::io {

void ByteWriter::write_file(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return ByteReader(std::move(data), path.string());
}

void write_header(ByteWriter& out, std::string_view magic, const nlohmann::json& header) {
    const std::string text = header.dump();
    out.text(magic);
    out.u64(text.size());
    out.text(text);
}

nlohmann::json read_header(ByteReader& in, std::string_view magic) {
    if (in.remaining() < magic.size() || in.text(magic.size()) != magic) {
        throw FormatError(in.origin() + ": bad magic bytes, expected \"" + std::string(magic) + "\"");
    }
    const std::uint64_t n = in.u64();
    in.need(n);
    try {
        return nlohmann::json::parse(in.text(n));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(in.origin() + ": corrupt header: " + e.what());
    }
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const nlohmann::json&)>& fn) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            fn(line_no, nlohmann::json::parse(line));
        } catch (const std::exception& e) {
            throw InputError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    for (const auto& row : rows) out << row.dump() << '\n';
}

std::string require_string(const nlohmann::json& obj, const char* key) {
    if (!obj.is_object()) throw InputError("expected a JSON object");
    const auto it = obj.find(key);
    if (it == obj.end()) throw InputError(std::string("missing field \"") + key + "\"");
    if (!it->is_string()) throw InputError(std::string("field \"") + key + "\" must be a string");
    return it->get<std::string>();
}

}  // namespace quadgfm::io

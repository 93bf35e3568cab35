#pragma once

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace quadgfm::io {

struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Calls fn(line_number, object) for every non-blank line. Parse failures and
// exceptions thrown by fn are rethrown as InputError("<path>:<line>: ...").
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const nlohmann::json&)>& fn);

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

// Typed field access with a readable error on absence or wrong type.
std::string require_string(const nlohmann::json& obj, const char* key);

}  // namespace quadgfm::io

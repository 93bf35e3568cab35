#include <chrono>
#include <ctime>
#include <fstream>

#include "quadgfm/cli.hpp"

namespace quadgfm::cli {

nlohmann::json to_json(const RunReport& r) {
    return {{"command", r.command},
            {"config", r.config},
            {"wall_time_s", r.wall_time_s},
            {"result", r.result},
            {"warnings", r.warnings}};
}

std::filesystem::path write_report(const RunReport& report, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create report directory " + dir.string() + ": " + ec.message());

    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    const std::string stem = "report-" + report.command + "-" + stamp;

    // O_EXCL-style claim so concurrent writers never share a name.
    for (int n = 0;; ++n) {
        const auto path = dir / (n == 0 ? stem + ".json" : stem + "-" + std::to_string(n) + ".json");
        std::FILE* f = std::fopen(path.c_str(), "wx");
        if (!f) {
            if (std::filesystem::exists(path)) continue;
            throw std::runtime_error("cannot write report " + path.string());
        }
        const std::string text = to_json(report).dump(2) + "\n";
        const bool ok = std::fwrite(text.data(), 1, text.size(), f) == text.size();
        if (std::fclose(f) != 0 || !ok) throw std::runtime_error("cannot write report " + path.string());
        return path;
    }
}

}  // namespace quadgfm::cli

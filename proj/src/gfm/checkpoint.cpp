#include <cmath>

#include "quadgfm/gfm.hpp"
#include "quadgfm/io/binary.hpp"

namespace quadgfm::gfm {

namespace {
constexpr std::string_view kMagic = "GFM1";
}

void save_checkpoint(const GfmParams<float>& params, const std::filesystem::path& path) {
    const auto blocks = params.blocks();
    nlohmann::json names = nlohmann::json::array();
    for (const auto& b : blocks) names.push_back({{"name", b.name}, {"size", b.values.size()}});
    io::ByteWriter out;
    io::write_header(out, kMagic,
                     {{"layers", params.layers}, {"dim", params.dim}, {"seed", params.seed}, {"blocks", names}});
    for (const auto& b : blocks)
        for (float v : b.values) out.f32(v);
    out.write_file(path);
}

GfmParams<float> load_checkpoint(const std::filesystem::path& path) {
    auto in = io::ByteReader::from_file(path);
    const auto header = io::read_header(in, kMagic);
    GfmParams<float> params;
    try {
        params = GfmParams<float>::zeros(header.at("layers").get<std::size_t>(), header.at("dim").get<std::size_t>());
        params.seed = header.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw io::FormatError(path.string() + ": bad checkpoint header: " + e.what());
    }
    auto blocks = params.blocks();
    const auto& listed = header.at("blocks");
    if (listed.size() != blocks.size()) {
        throw io::FormatError(path.string() + ": checkpoint lists " + std::to_string(listed.size()) +
                              " tensors, expected " + std::to_string(blocks.size()));
    }
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        if (listed[i].at("name").get<std::string>() != blocks[i].name ||
            listed[i].at("size").get<std::size_t>() != blocks[i].values.size()) {
            throw io::FormatError(path.string() + ": tensor " + std::to_string(i) + " does not match " +
                                  blocks[i].name);
        }
        for (auto& v : blocks[i].values) {
            v = in.f32();
            if (!std::isfinite(v)) throw io::FormatError(path.string() + ": non-finite value in " + blocks[i].name);
        }
    }
    if (in.remaining() != 0) throw io::FormatError(path.string() + ": trailing bytes after checkpoint data");
    return params;
}

GfmParams<float> load_checkpoint(const std::filesystem::path& path, std::size_t layers, std::size_t dim) {
    auto params = load_checkpoint(path);
    if (params.layers != layers || params.dim != dim) {
        throw ModelError(path.string() + ": checkpoint has L=" + std::to_string(params.layers) +
                         ", d=" + std::to_string(params.dim) + " but the model expects L=" + std::to_string(layers) +
                         ", d=" + std::to_string(dim));
    }
    return params;
}

}  // namespace quadgfm::gfm

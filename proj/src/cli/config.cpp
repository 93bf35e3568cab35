#include <fstream>
#include <set>

#include "quadgfm/cli.hpp"

namespace quadgfm::cli {

using nlohmann::json;

namespace {

std::string reduction_name(numerics::Reduction r) {
    return r == numerics::Reduction::Deterministic ? "deterministic" : "fast";
}

std::string precision_name(Precision p) {
    switch (p) {
    case Precision::Bf16: return "bf16";
    case Precision::Fp64: return "fp64";
    default: return "fp32";
    }
}

// Reads the keys of one JSON object, remembering which were consumed.
class Section {
public:
    Section(const json& obj, std::string prefix, bool lax) : obj_(obj), prefix_(std::move(prefix)), lax_(lax) {
        if (!obj_.is_object()) throw ConfigError("config " + where("") + " must be an object");
    }

    const json* get(const char* key) {
        seen_.insert(key);
        auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    void number(const char* key, double& out) {
        if (auto* v = get(key)) {
            if (!v->is_number()) type_error(key, "a number", *v);
            out = v->get<double>();
        }
    }
    template <class U> void count(const char* key, U& out) {
        if (auto* v = get(key)) {
            if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
                type_error(key, "a non-negative integer", *v);
            }
            out = static_cast<U>(v->get<std::uint64_t>());
        }
    }
    void integer(const char* key, int& out) {
        if (auto* v = get(key)) {
            if (!v->is_number_integer()) type_error(key, "an integer", *v);
            out = v->get<int>();
        }
    }
    void boolean(const char* key, bool& out) {
        if (auto* v = get(key)) {
            if (!v->is_boolean()) type_error(key, "true or false", *v);
            out = v->get<bool>();
        }
    }
    void string(const char* key, std::string& out) {
        if (auto* v = get(key)) {
            if (!v->is_string()) type_error(key, "a string", *v);
            out = v->get<std::string>();
        }
    }
    void path(const char* key, std::filesystem::path& out) {
        std::string s = out.string();
        string(key, s);
        out = s;
    }
    template <class E> void choice(const char* key, E& out, std::initializer_list<std::pair<const char*, E>> options) {
        std::string s;
        if (!get(key)) return;
        string(key, s);
        for (const auto& [name, value] : options)
            if (s == name) {
                out = value;
                return;
            }
        std::string names;
        for (const auto& o : options) names += std::string(names.empty() ? "" : ", ") + o.first;
        throw ConfigError("config key " + where(key) + ": \"" + s + "\" is not one of " + names);
    }
    Section sub(const char* key) {
        static const json empty = json::object();
        const json* v = get(key);
        return Section(v ? *v : empty, where(key), lax_);
    }

    void finish() const {
        if (lax_) return;
        for (const auto& [k, _] : obj_.items())
            if (!seen_.contains(k)) throw ConfigError("unknown config key \"" + where(k) + "\"");
    }

private:
    std::string where(const std::string& key) const {
        if (prefix_.empty()) return key.empty() ? "root" : key;
        return key.empty() ? prefix_ : prefix_ + "." + key;
    }
    [[noreturn]] void type_error(const char* key, const char* want, const json& got) const {
        throw ConfigError("config key " + where(key) + " must be " + want + " (got " + got.dump() + ")");
    }

    const json& obj_;
    std::string prefix_;
    bool lax_;
    std::set<std::string> seen_;
};

json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": not valid JSON: " + e.what());
    }
}

}  // namespace

std::filesystem::path RunConfig::checkpoint_path() const {
    return paths.checkpoint.empty() ? paths.output_dir / "model.gfm" : paths.checkpoint;
}

std::filesystem::path RunConfig::plan_path() const {
    return paths.plan.empty() ? paths.output_dir / "plan.json" : paths.plan;
}

json to_json(const RunConfig& c) {
    const auto& t = c.train;
    return {
        {"seed", c.seed},
        {"k", c.k},
        {"workers", c.workers},
        {"precision", precision_name(c.precision)},
        {"paths",
         {{"graph", c.paths.graph.string()},
          {"embeddings", c.paths.embeddings.string()},
          {"query_embeddings", c.paths.query_embeddings.string()},
          {"checkpoint", c.paths.checkpoint.string()},
          {"dataset", c.paths.dataset.string()},
          {"manifest", c.paths.manifest.string()},
          {"plan", c.paths.plan.string()},
          {"output_dir", c.paths.output_dir.string()}}},
        {"embed", {{"provider", c.embed_provider}, {"hash_seed", c.hash_seed}}},
        {"train",
         {{"lambda", t.lambda},
          {"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},
          {"epochs", t.epochs},
          {"layers", t.layers},
          {"dim", t.dim},
          {"ranking", t.ranking},
          {"negatives", t.negatives},
          {"seed_top_m", t.seed_top_m},
          {"reduction", reduction_name(t.reduction)}}},
        {"llm",
         {{"endpoint", c.llm.endpoint},
          {"model", c.llm.model},
          {"temperature", c.llm.temperature},
          {"timeout_s", c.llm.timeout_s},
          {"max_attempts", c.llm.max_attempts},
          {"backoff_s", c.llm.backoff_s},
          {"max_in_flight", c.llm.max_in_flight},
          {"api_key_env", c.llm.api_key_env}}},
        {"prompt", {{"extra_sections", c.prompt_extra_sections}}},
    };
}

RunConfig config_from_json(const json& layered, bool lax) {
    RunConfig c;
    Section root(layered, "", lax);
    root.count("seed", c.seed);
    root.count("k", c.k);
    root.count("workers", c.workers);
    root.choice("precision", c.precision,
                {{"fp32", Precision::Fp32}, {"bf16", Precision::Bf16}, {"fp64", Precision::Fp64}});
    {
        auto s = root.sub("paths");
        s.path("graph", c.paths.graph);
        s.path("embeddings", c.paths.embeddings);
        s.path("query_embeddings", c.paths.query_embeddings);
        s.path("checkpoint", c.paths.checkpoint);
        s.path("dataset", c.paths.dataset);
        s.path("manifest", c.paths.manifest);
        s.path("plan", c.paths.plan);
        s.path("output_dir", c.paths.output_dir);
        s.finish();
    }
    {
        auto s = root.sub("embed");
        s.choice("provider", c.embed_provider, {{"hash", std::string("hash")}, {"file", std::string("file")}});
        s.count("hash_seed", c.hash_seed);
        s.finish();
    }
    {
        auto s = root.sub("train");
        auto& t = c.train;
        s.number("lambda", t.lambda);
        s.number("lr", t.lr);
        s.number("weight_decay", t.weight_decay);
        s.count("batch_size", t.batch_size);
        s.count("epochs", t.epochs);
        s.count("layers", t.layers);
        s.count("dim", t.dim);
        s.boolean("ranking", t.ranking);
        s.count("negatives", t.negatives);
        s.count("seed_top_m", t.seed_top_m);
        s.choice("reduction", t.reduction,
                 {{"deterministic", numerics::Reduction::Deterministic}, {"fast", numerics::Reduction::Fast}});
        s.finish();
    }
    {
        auto s = root.sub("llm");
        s.string("endpoint", c.llm.endpoint);
        s.string("model", c.llm.model);
        s.number("temperature", c.llm.temperature);
        s.number("timeout_s", c.llm.timeout_s);
        s.integer("max_attempts", c.llm.max_attempts);
        s.number("backoff_s", c.llm.backoff_s);
        s.count("max_in_flight", c.llm.max_in_flight);
        s.string("api_key_env", c.llm.api_key_env);
        s.finish();
    }
    {
        auto s = root.sub("prompt");
        s.boolean("extra_sections", c.prompt_extra_sections);
        s.finish();
    }
    root.finish();

    c.train.seed = c.seed;
    try {
        c.train.validate();
    } catch (const train::TrainingError& e) {
        throw ConfigError(std::string("invalid training config: ") + e.what());
    }
    if (c.k < 1) throw ConfigError("k must be at least 1");
    if (c.workers < 1) throw ConfigError("workers must be at least 1");
    if (c.llm.timeout_s <= 0) throw ConfigError("llm.timeout_s must be positive");
    if (c.llm.max_attempts < 1) throw ConfigError("llm.max_attempts must be at least 1");
    return c;
}

RunConfig load_config(const std::optional<std::filesystem::path>& path, const json& overrides, bool lax) {
    json layered = json::object();
    if (path) {
        layered = read_json_file(*path);
        if (!layered.is_object()) throw ConfigError(path->string() + ": config must be a JSON object");
    }
    if (!overrides.is_null()) layered.merge_patch(overrides);
    return config_from_json(layered, lax);
}

}  // namespace quadgfm::cli

#include "fdnet/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fdnet/error.hpp"

namespace fdnet::config {
namespace {

struct Field {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError("invalid value '" + value + "' for key '" + key + "' (expected " + expected + ")");
}

long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size()) bad_value(key, v, "an integer");
        return x;
    } catch (const std::logic_error&) {
        bad_value(key, v, "an integer");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        if (!v.empty() && v[0] == '-') bad_value(key, v, "a non-negative integer");
        const unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) bad_value(key, v, "a non-negative integer");
        return x;
    } catch (const std::logic_error&) {
        bad_value(key, v, "a non-negative integer");
    }
}

double to_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) bad_value(key, v, "a number");
        return x;
    } catch (const std::logic_error&) {
        bad_value(key, v, "a number");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, v, "true/false");
}

std::string real_str(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

#define INT_FIELD(key, expr) \
    Field { key, [](RunConfig& c, const std::string& v) { expr = static_cast<decltype(expr)>(to_int(key, v)); }, \
            [](const RunConfig& c) { return std::to_string(expr); } }
#define U64_FIELD(key, expr) \
    Field { key, [](RunConfig& c, const std::string& v) { expr = to_u64(key, v); }, \
            [](const RunConfig& c) { return std::to_string(expr); } }
#define REAL_FIELD(key, expr) \
    Field { key, [](RunConfig& c, const std::string& v) { expr = to_real(key, v); }, \
            [](const RunConfig& c) { return real_str(expr); } }
#define BOOL_FIELD(key, expr) \
    Field { key, [](RunConfig& c, const std::string& v) { expr = to_bool(key, v); }, \
            [](const RunConfig& c) { return bool_str(expr); } }
#define STR_FIELD(key, expr) \
    Field { key, [](RunConfig& c, const std::string& v) { expr = v; }, [](const RunConfig& c) { return expr; } }

const std::map<std::string, std::vector<Field>>& registry() {
    static const std::map<std::string, std::vector<Field>> fields = {
        {"model",
         {
             INT_FIELD("input_size", c.model.input_size),
             INT_FIELD("base_width", c.model.base_width),
             INT_FIELD("boundary_dim", c.model.boundary_dim),
             Field{"boundary_mode",
                   [](RunConfig& c, const std::string& v) { c.model.boundary_mode = model::parse_boundary_mode(v); },
                   [](const RunConfig& c) { return model::boundary_mode_name(c.model.boundary_mode); }},
             BOOL_FIELD("use_sam", c.model.ablation.use_sam),
             BOOL_FIELD("use_lif", c.model.ablation.use_lif),
             BOOL_FIELD("use_lw", c.model.ablation.use_lw),
             Field{"wavelet", [](RunConfig& c, const std::string& v) { c.model.wavelet = wavelet::parse_family(v); },
                   [](const RunConfig& c) { return wavelet::family_name(c.model.wavelet); }},
             INT_FIELD("ctb_dim", c.model.ctb_dim),
             INT_FIELD("vit_patch", c.model.vit_patch),
             INT_FIELD("vit_dim", c.model.vit_dim),
             INT_FIELD("vit_heads", c.model.vit_heads),
             INT_FIELD("vit_depth", c.model.vit_depth),
             U64_FIELD("init_seed", c.model.init_seed),
             BOOL_FIELD("check_shapes", c.model.check_shapes),
         }},
        {"train",
         {
             REAL_FIELD("learning_rate", c.train.learning_rate),
             INT_FIELD("steps", c.train.steps),
             INT_FIELD("batch_size", c.train.batch_size),
             REAL_FIELD("w_dice", c.train.loss_weights.dice),
             REAL_FIELD("w_bce", c.train.loss_weights.bce),
             U64_FIELD("seed", c.train.seed),
             INT_FIELD("eval_every", c.train.eval_every),
         }},
        {"data",
         {
             INT_FIELD("size", c.data.phantom.image_size),
             INT_FIELD("teeth", c.data.phantom.tooth_count),
             REAL_FIELD("blur", c.data.phantom.blur_sigma),
             INT_FIELD("streaks", c.data.phantom.streak_count),
             REAL_FIELD("noise", c.data.phantom.noise_sigma),
             U64_FIELD("seed", c.data.phantom.seed),
             Field{"count", [](RunConfig& c, const std::string& v) { c.data.count = to_u64("count", v); },
                   [](const RunConfig& c) { return std::to_string(c.data.count); }},
             Field{"split", [](RunConfig& c, const std::string& v) { c.data.split = phantom::parse_split(v); },
                   [](const RunConfig& c) { return real_str(c.data.split.train) + "," + real_str(c.data.split.test); }},
             STR_FIELD("dir", c.data.dir),
             STR_FIELD("embedding_dir", c.data.embedding_dir),
         }},
    };
    return fields;
}

#undef INT_FIELD
#undef U64_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD
#undef STR_FIELD

const Field& lookup(const std::string& section, const std::string& key) {
    const auto& reg = registry();
    const auto sec = reg.find(section);
    if (sec == reg.end()) throw ConfigError("unknown config section [" + section + "] (valid: model, train, data)");
    for (const auto& f : sec->second) {
        if (f.key == key) return f;
    }
    std::string valid;
    for (const auto& f : sec->second) valid += (valid.empty() ? "" : ", ") + f.key;
    throw ConfigError("unknown key '" + key + "' in [" + section + "] (valid: " + valid + ")");
}

}  // namespace

std::vector<std::string> valid_keys(const std::string& section) {
    std::vector<std::string> out;
    const auto& reg = registry();
    if (auto it = reg.find(section); it != reg.end()) {
        for (const auto& f : it->second) out.push_back(f.key);
    }
    return out;
}

void set_value(RunConfig& cfg, const std::string& section, const std::string& key, const std::string& value) {
    lookup(section, key).set(cfg, value);
}

std::string get_value(const RunConfig& cfg, const std::string& section, const std::string& key) {
    return lookup(section, key).get(cfg);
}

RunConfig parse(const std::string& text, RunConfig base) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.message() + " (line " + std::to_string(e.line()) + ")");
    }
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            throw ConfigError("key '" + section + "' appears outside any section");
        }
        for (const auto& [key, value] : body) set_value(base, section, key, value.data());
    }
    return base;
}

RunConfig load_file(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), std::move(base));
}

std::string section_text(const RunConfig& cfg, const std::string& section) {
    std::string out = "[" + section + "]\n";
    for (const auto& key : valid_keys(section)) out += key + " = " + get_value(cfg, section, key) + "\n";
    return out;
}

std::string to_text(const RunConfig& cfg) {
    return section_text(cfg, "model") + "\n" + section_text(cfg, "train") + "\n" + section_text(cfg, "data");
}

std::string model_echo(const model::ModelConfig& m) {
    RunConfig cfg;
    cfg.model = m;
    return section_text(cfg, "model");
}

model::ModelConfig parse_model_echo(const std::string& text) { return parse(text).model; }

}  // namespace fdnet::config

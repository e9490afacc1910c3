#include "stamp/config/config.hpp"

#include "stamp/error.hpp"

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

namespace stamp::config {
namespace {

using json = nlohmann::ordered_json;

const std::map<std::string, std::set<std::string>>& known_keys()
{
    static const std::map<std::string, std::set<std::string>> keys{
        {"preprocessing",
         {"output_dir", "wsi_dir", "cache_dir", "microns", "norm", "normalization_template", "model_path",
          "del_slide", "only_feature_extraction", "cores", "device", "brightness_max", "edge_min", "canny_low",
          "canny_high", "macenko_i0", "macenko_alpha", "macenko_beta", "seed", "model_url", "template_url"}},
        {"modeling",
         {"clini_table", "slide_table", "feature_dir", "output_dir", "target_label", "categories", "cat_labels",
          "cont_labels", "n_splits", "model_path", "deploy_feature_dir", "seed", "advanced"}},
        {"statistics", {"pred_csvs", "target_label", "true_class", "output_dir", "n_bootstrap", "seed"}},
        {"heatmaps", {"slide_name", "feature_dir", "wsi_dir", "model_path", "output_dir", "n_toptiles", "cache_dir"}},
    };
    return keys;
}

const std::set<std::string>& advanced_keys()
{
    static const std::set<std::string> keys{"dim_model", "n_layers",   "n_heads",  "mlp_ratio",
                                            "dropout",   "batch_size", "max_bag_size", "max_epochs",
                                            "patience",  "lr",         "weight_decay", "seed"};
    return keys;
}

const std::map<std::string, std::set<std::string>>& path_keys()
{
    static const std::map<std::string, std::set<std::string>> keys{
        {"preprocessing", {"output_dir", "wsi_dir", "cache_dir", "normalization_template", "model_path"}},
        {"modeling", {"clini_table", "slide_table", "feature_dir", "output_dir", "model_path", "deploy_feature_dir"}},
        {"statistics", {"pred_csvs", "output_dir"}},
        {"heatmaps", {"feature_dir", "wsi_dir", "model_path", "output_dir", "cache_dir"}},
    };
    return keys;
}

json scalar_to_json(const YAML::Node& n)
{
    const std::string& s = n.Scalar();
    if (n.Tag() == "!") return s;   // quoted scalar
    if (s.empty() || s == "~" || s == "null") return nullptr;
    if (s == "true") return true;
    if (s == "false") return false;
    static const std::regex int_re(R"([-+]?[0-9]+)");
    static const std::regex float_re(R"([-+]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][-+]?[0-9]+)?)");
    if (std::regex_match(s, int_re)) {
        try {
            return std::stoll(s);
        } catch (const std::out_of_range&) {
            return s;
        }
    }
    if (std::regex_match(s, float_re)) return std::stod(s);
    return s;
}

json to_json(const YAML::Node& n)
{
    switch (n.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined: return nullptr;
    case YAML::NodeType::Scalar: return scalar_to_json(n);
    case YAML::NodeType::Sequence: {
        json arr = json::array();
        for (const auto& item : n) arr.push_back(to_json(item));
        return arr;
    }
    case YAML::NodeType::Map: {
        json obj = json::object();
        for (const auto& kv : n) obj[kv.first.as<std::string>()] = to_json(kv.second);
        return obj;
    }
    }
    return nullptr;
}

json resolve(const json& value, const Path& base)
{
    auto one = [&](const json& v) -> json {
        if (!v.is_string()) return v;
        Path p(v.get<std::string>());
        if (p.is_relative()) p = base / p;
        return p.lexically_normal().string();
    };
    if (value.is_array()) {
        json out = json::array();
        for (const auto& v : value) out.push_back(one(v));
        return out;
    }
    return one(value);
}

void emit(YAML::Emitter& out, const json& v)
{
    if (v.is_null()) {
        out << YAML::Null;
    } else if (v.is_boolean()) {
        out << (v.get<bool>() ? "true" : "false");
    } else if (v.is_number_integer()) {
        out << v.get<long long>();
    } else if (v.is_number_float()) {
        std::string s = fmt::format("{}", v.get<double>());
        if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
        out << s;
    } else if (v.is_string()) {
        out << YAML::DoubleQuoted << v.get<std::string>();
    } else if (v.is_array()) {
        out << YAML::BeginSeq;
        for (const auto& item : v) emit(out, item);
        out << YAML::EndSeq;
    } else if (v.is_object()) {
        out << YAML::BeginMap;
        for (const auto& [k, item] : v.items()) {
            out << YAML::Key << k << YAML::Value;
            emit(out, item);
        }
        out << YAML::EndMap;
    }
}

std::string type_name(const json& v)
{
    if (v.is_boolean()) return "boolean";
    if (v.is_number_integer()) return "integer";
    if (v.is_number()) return "number";
    if (v.is_string()) return "string";
    if (v.is_array()) return "list";
    if (v.is_object()) return "mapping";
    return "null";
}

// Typed access to one section; collects absent required keys.
class SectionReader {
public:
    SectionReader(const json& tree, std::string section, std::vector<std::string>& missing)
        : section_(std::move(section)), missing_(missing)
    {
        if (tree.contains(section_) && tree.at(section_).is_object()) node_ = &tree.at(section_);
    }
    SectionReader(const json* node, std::string section, std::vector<std::string>& missing)
        : node_(node), section_(std::move(section)), missing_(missing)
    {
    }

    const json* find(const std::string& key) const
    {
        if (node_ == nullptr || !node_->contains(key)) return nullptr;
        const json& v = node_->at(key);
        return v.is_null() ? nullptr : &v;
    }

    std::string name(const std::string& key) const { return section_ + "." + key; }

    [[noreturn]] void mismatch(const std::string& key, const char* expected, const json& v) const
    {
        throw Error(ErrorCode::TypeMismatch,
                    fmt::format("Type mismatch: {} expected {}, got {} {}", name(key), expected, type_name(v), v.dump()),
                    name(key));
    }

    std::optional<std::string> opt_string(const std::string& key) const
    {
        const json* v = find(key);
        if (v == nullptr) return std::nullopt;
        if (!v->is_string()) mismatch(key, "string", *v);
        return v->get<std::string>();
    }

    std::string req_string(const std::string& key)
    {
        auto v = opt_string(key);
        if (!v || v->empty()) {
            missing_.push_back(name(key));
            return {};
        }
        return *v;
    }

    std::optional<Path> opt_path(const std::string& key) const
    {
        auto v = opt_string(key);
        if (!v || v->empty()) return std::nullopt;
        return Path(*v);
    }

    Path req_path(const std::string& key) { return Path(req_string(key)); }

    std::optional<double> opt_number(const std::string& key) const
    {
        const json* v = find(key);
        if (v == nullptr) return std::nullopt;
        if (!v->is_number()) mismatch(key, "number", *v);
        return v->get<double>();
    }

    double number(const std::string& key, double fallback) const { return opt_number(key).value_or(fallback); }

    std::optional<long long> opt_integer(const std::string& key) const
    {
        const json* v = find(key);
        if (v == nullptr) return std::nullopt;
        if (!v->is_number_integer()) mismatch(key, "integer", *v);
        return v->get<long long>();
    }

    int integer(const std::string& key, int fallback) const
    {
        return static_cast<int>(opt_integer(key).value_or(fallback));
    }

    bool boolean(const std::string& key, bool fallback) const
    {
        const json* v = find(key);
        if (v == nullptr) return fallback;
        if (!v->is_boolean()) mismatch(key, "boolean (true or false)", *v);
        return v->get<bool>();
    }

    std::optional<std::vector<std::string>> opt_string_list(const std::string& key) const
    {
        const json* v = find(key);
        if (v == nullptr) return std::nullopt;
        std::vector<std::string> out;
        auto element = [&](const json& e) {
            if (e.is_string()) out.push_back(e.get<std::string>());
            else if (e.is_number_integer()) out.push_back(std::to_string(e.get<long long>()));
            else if (e.is_boolean()) out.push_back(e.get<bool>() ? "true" : "false");
            else mismatch(key, "list of strings", *v);
        };
        if (v->is_array()) {
            for (const auto& e : *v) element(e);
        } else {
            element(*v);
        }
        return out;
    }

    void require_positive(const std::string& key, double value, double min) const
    {
        if (!(value >= min)) {
            throw Error(ErrorCode::InvalidValue, fmt::format("Invalid value: {} must be >= {}", name(key), min),
                        name(key));
        }
    }

private:
    const json* node_ = nullptr;
    std::string section_;
    std::vector<std::string>& missing_;
};

void throw_missing(const std::vector<std::string>& missing)
{
    if (missing.empty()) return;
    std::string list;
    for (const auto& k : missing) list += (list.empty() ? "'" : ", '") + k + "'";
    throw Error(ErrorCode::MissingKeys, "Missing required configuration keys: [" + list + "]", list);
}

int default_cores()
{
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::clamp(hw, 1u, 8u));
}

PreprocessSettings read_preprocessing(const json& tree, bool strict, std::vector<std::string>& missing)
{
    SectionReader r(tree, "preprocessing", missing);
    PreprocessSettings s;
    if (strict) {
        s.output_dir = r.req_path("output_dir");
        s.wsi_dir = r.req_path("wsi_dir");
        s.cache_dir = r.req_path("cache_dir");
        if (auto m = r.opt_number("microns")) s.microns = *m;
        else missing.push_back("preprocessing.microns");
    } else {
        s.output_dir = r.opt_path("output_dir").value_or(Path{});
        s.wsi_dir = r.opt_path("wsi_dir").value_or(Path{});
        s.cache_dir = r.opt_path("cache_dir").value_or(Path{});
        s.microns = r.number("microns", 0.0);
    }
    s.norm = r.boolean("norm", false);
    s.normalization_template = r.opt_path("normalization_template");
    if (strict && s.norm && !s.normalization_template) missing.push_back("preprocessing.normalization_template");
    s.model_path = r.opt_path("model_path");
    s.del_slide = r.boolean("del_slide", false);
    s.only_feature_extraction = r.boolean("only_feature_extraction", false);
    s.cores = r.integer("cores", default_cores());
    s.device = r.opt_string("device").value_or("cpu");
    s.brightness_max = r.number("brightness_max", s.brightness_max);
    s.edge_min = r.number("edge_min", s.edge_min);
    s.canny_low = r.number("canny_low", s.canny_low);
    s.canny_high = r.number("canny_high", s.canny_high);
    s.macenko_i0 = r.number("macenko_i0", s.macenko_i0);
    s.macenko_alpha = r.number("macenko_alpha", s.macenko_alpha);
    s.macenko_beta = r.number("macenko_beta", s.macenko_beta);
    s.seed = static_cast<std::uint64_t>(r.opt_integer("seed").value_or(0));
    s.model_url = r.opt_string("model_url");
    s.template_url = r.opt_string("template_url");

    if (r.find("microns") && !(s.microns > 0.0)) {
        throw Error(ErrorCode::InvalidValue, "Invalid value: preprocessing.microns must be > 0",
                    "preprocessing.microns");
    }
    r.require_positive("cores", s.cores, 1);
    static const std::regex device_re(R"(cpu|cuda(:[0-9]+)?)");
    if (!std::regex_match(s.device, device_re)) {
        throw Error(ErrorCode::InvalidValue, "Invalid value: preprocessing.device must be cpu or cuda:N",
                    "preprocessing.device");
    }
    if (s.canny_low > s.canny_high) {
        throw Error(ErrorCode::InvalidValue, "Invalid value: preprocessing.canny_low exceeds canny_high",
                    "preprocessing.canny_low");
    }
    return s;
}

void check_categories(const std::vector<std::string>& cats, const std::string& key)
{
    std::set<std::string> seen;
    if (cats.empty()) throw Error(ErrorCode::InvalidValue, "Invalid value: " + key + " must not be empty", key);
    for (const auto& c : cats) {
        if (c.empty() || !seen.insert(c).second)
            throw Error(ErrorCode::InvalidValue, "Invalid value: " + key + " must hold distinct non-empty names", key);
    }
}

ModelingSettings read_modeling(const json& tree, const std::string& command, std::vector<std::string>& missing)
{
    SectionReader r(tree, "modeling", missing);
    ModelingSettings s;
    const bool deploy = command == "deploy";
    if (deploy) {
        s.clini_table = r.opt_path("clini_table");
        s.feature_dir = r.opt_path("feature_dir");
    } else {
        s.clini_table = r.req_path("clini_table");
        s.feature_dir = r.req_path("feature_dir");
    }
    s.slide_table = r.req_path("slide_table");
    s.output_dir = r.req_path("output_dir");
    s.target_label = r.req_string("target_label");
    s.categories = r.opt_string_list("categories");
    s.cat_labels = r.opt_string_list("cat_labels").value_or(std::vector<std::string>{});
    s.cont_labels = r.opt_string_list("cont_labels").value_or(std::vector<std::string>{});
    s.n_splits = r.integer("n_splits", 5);
    s.model_path = r.opt_path("model_path");
    s.deploy_feature_dir = r.opt_path("deploy_feature_dir");
    if (deploy) {
        if (!s.model_path) missing.push_back("modeling.model_path");
        if (!s.deploy_feature_dir) missing.push_back("modeling.deploy_feature_dir");
    }
    if (s.categories) {
        check_categories(*s.categories, "modeling.categories");
        if (s.categories->size() < 2)
            throw Error(ErrorCode::InvalidValue, "Invalid value: modeling.categories needs at least two classes",
                        "modeling.categories");
    }
    r.require_positive("n_splits", s.n_splits, 2);
    s.train.seed = static_cast<std::uint64_t>(r.opt_integer("seed").value_or(0));

    const json* adv = r.find("advanced");
    if (adv != nullptr) {
        if (!adv->is_object()) r.mismatch("advanced", "mapping", *adv);
        SectionReader a(adv, "modeling.advanced", missing);
        s.model.dim_model = a.integer("dim_model", s.model.dim_model);
        s.model.n_layers = a.integer("n_layers", s.model.n_layers);
        s.model.n_heads = a.integer("n_heads", s.model.n_heads);
        s.model.mlp_ratio = a.integer("mlp_ratio", s.model.mlp_ratio);
        s.model.dropout = a.number("dropout", s.model.dropout);
        s.train.batch_size = a.integer("batch_size", s.train.batch_size);
        s.train.max_bag_size = a.integer("max_bag_size", s.train.max_bag_size);
        s.train.max_epochs = a.integer("max_epochs", s.train.max_epochs);
        s.train.patience = a.integer("patience", s.train.patience);
        s.train.lr = a.number("lr", s.train.lr);
        s.train.weight_decay = a.number("weight_decay", s.train.weight_decay);
        if (auto seed = a.opt_integer("seed")) s.train.seed = static_cast<std::uint64_t>(*seed);
        a.require_positive("dim_model", s.model.dim_model, 1);
        a.require_positive("n_layers", s.model.n_layers, 0);
        a.require_positive("n_heads", s.model.n_heads, 1);
        a.require_positive("mlp_ratio", s.model.mlp_ratio, 1);
        a.require_positive("batch_size", s.train.batch_size, 1);
        a.require_positive("max_bag_size", s.train.max_bag_size, 1);
        a.require_positive("max_epochs", s.train.max_epochs, 1);
        a.require_positive("patience", s.train.patience, 1);
        if (s.model.dim_model % s.model.n_heads != 0) {
            throw Error(ErrorCode::InvalidValue,
                        "Invalid value: modeling.advanced.dim_model must be divisible by n_heads",
                        "modeling.advanced.dim_model");
        }
        if (s.model.dropout < 0.0 || s.model.dropout >= 1.0) {
            throw Error(ErrorCode::InvalidValue, "Invalid value: modeling.advanced.dropout must be in [0, 1)",
                        "modeling.advanced.dropout");
        }
    }
    return s;
}

StatisticsSettings read_statistics(const json& tree, std::vector<std::string>& missing)
{
    SectionReader r(tree, "statistics", missing);
    StatisticsSettings s;
    auto csvs = r.opt_string_list("pred_csvs");
    if (!csvs || csvs->empty()) missing.push_back("statistics.pred_csvs");
    else
        for (const auto& c : *csvs) s.pred_csvs.emplace_back(c);
    s.target_label = r.req_string("target_label");
    s.true_class = r.req_string("true_class");
    s.output_dir = r.req_path("output_dir");
    s.n_bootstrap = r.integer("n_bootstrap", 1000);
    s.seed = static_cast<std::uint64_t>(r.opt_integer("seed").value_or(0));
    r.require_positive("n_bootstrap", s.n_bootstrap, 1);
    return s;
}

HeatmapsSettings read_heatmaps(const json& tree, std::vector<std::string>& missing)
{
    SectionReader r(tree, "heatmaps", missing);
    HeatmapsSettings s;
    s.slide_name = r.opt_string("slide_name").value_or("*");
    s.feature_dir = r.req_path("feature_dir");
    s.wsi_dir = r.req_path("wsi_dir");
    s.model_path = r.req_path("model_path");
    s.output_dir = r.req_path("output_dir");
    s.n_toptiles = r.integer("n_toptiles", 8);
    s.cache_dir = r.opt_path("cache_dir");
    if (!s.cache_dir) {
        std::vector<std::string> ignored;
        SectionReader pre(tree, "preprocessing", ignored);
        s.cache_dir = pre.opt_path("cache_dir");
    }
    r.require_positive("n_toptiles", s.n_toptiles, 1);
    return s;
}

} // namespace

bool PipelineConfig::has_section(const std::string& name) const
{
    return tree.contains(name) && tree.at(name).is_object();
}

PipelineConfig parse_config(const std::string& text, const Path& base_dir, const Path& source)
{
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw Error(ErrorCode::ConfigParseError,
                    fmt::format("Config parse error at line {}, column {}: {}", e.mark.line + 1, e.mark.column + 1,
                                e.msg),
                    source.string());
    }
    PipelineConfig cfg;
    cfg.source = source;
    if (root.IsNull()) return cfg;
    if (!root.IsMap()) {
        throw Error(ErrorCode::ConfigParseError, "Config parse error: top level must be a mapping of sections",
                    source.string());
    }
    const json raw = to_json(root);
    const auto& known = known_keys();
    for (const auto& [section, body] : raw.items()) {
        auto it = known.find(section);
        if (it == known.end()) {
            cfg.warnings.push_back("unknown configuration section '" + section + "' ignored");
            cfg.tree[section] = body;
            continue;
        }
        if (body.is_null()) {
            cfg.tree[section] = json::object();
            continue;
        }
        if (!body.is_object()) {
            throw Error(ErrorCode::TypeMismatch, "Type mismatch: section '" + section + "' must be a mapping",
                        section);
        }
        json out = json::object();
        const auto& paths = path_keys().at(section);
        for (const auto& [key, value] : body.items()) {
            if (!it->second.count(key)) cfg.warnings.push_back("unknown configuration key '" + section + "." + key + "'");
            if (key == "advanced" && value.is_object()) {
                for (const auto& [ak, av] : value.items()) {
                    (void)av;
                    if (!advanced_keys().count(ak))
                        cfg.warnings.push_back("unknown configuration key '" + section + ".advanced." + ak + "'");
                }
            }
            out[key] = paths.count(key) ? resolve(value, base_dir) : value;
        }
        cfg.tree[section] = out;
    }
    return cfg;
}

PipelineConfig load_config(const Path& path)
{
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) {
        throw Error(ErrorCode::ConfigFileNotFound, "Config file not found", path.string());
    }
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    const Path abs = std::filesystem::absolute(path).lexically_normal();
    return parse_config(ss.str(), abs.parent_path(), abs);
}

std::string dump_config(const PipelineConfig& config)
{
    YAML::Emitter out;
    if (config.tree.empty()) return "{}\n";
    emit(out, config.tree);
    return std::string(out.c_str()) + "\n";
}

bool is_command(const std::string& command)
{
    return std::find(std::begin(kCommands), std::end(kCommands), command) != std::end(kCommands);
}

ValidatedSection validate_for_command(const PipelineConfig& config, const std::string& command)
{
    if (!is_command(command)) {
        throw Error(ErrorCode::UnknownCommand, "Unknown command '" + command + "'", command);
    }
    ValidatedSection v;
    v.command = command;
    std::vector<std::string> missing;
    const json& tree = config.tree;
    if (command == "preprocess") {
        v.preprocessing = read_preprocessing(tree, true, missing);
    } else if (command == "setup") {
        if (config.has_section("preprocessing")) v.preprocessing = read_preprocessing(tree, false, missing);
    } else if (command == "crossval" || command == "train" || command == "deploy") {
        v.modeling = read_modeling(tree, command, missing);
    } else if (command == "statistics") {
        v.statistics = read_statistics(tree, missing);
    } else if (command == "heatmaps") {
        v.heatmaps = read_heatmaps(tree, missing);
    }
    throw_missing(missing);
    return v;
}

} // namespace stamp::config

#include "fedl2t/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "fedl2t/error.hpp"

namespace fedl2t {

namespace {

namespace pt = boost::property_tree;

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T>
T parse_number(const std::string& raw, const std::string& key) {
    const std::string s = trim(raw);
    T value{};
    const char* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, value);
    if (s.empty() || ec != std::errc() || ptr != end) throw ConfigError("cannot parse '" + raw + "'", key);
    return value;
}

std::size_t parse_size(const std::string& raw, const std::string& key) {
    if (trim(raw).starts_with('-')) throw ConfigError("must be non-negative", key);
    return parse_number<std::size_t>(raw, key);
}

std::string fmt(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

template <class Seq>
std::string join(const Seq& items) {
    std::string out;
    for (const auto& x : items) {
        if (!out.empty()) out += ", ";
        if constexpr (std::is_same_v<std::decay_t<decltype(x)>, Algorithm>) {
            out += to_string(x);
        } else {
            out += std::to_string(x);
        }
    }
    return out;
}

using Setter = void (*)(ExperimentConfig&, const std::string&, const std::string&);

struct KeyDef {
    const char* section;
    const char* key;
    Setter set;
};

const KeyDef kKeys[] = {
    {"data", "clients", [](auto& c, auto& v, auto& k) { c.data.clients = parse_size(v, k); }},
    {"data", "samples_per_client", [](auto& c, auto& v, auto& k) { c.data.samples_per_client = parse_size(v, k); }},
    {"data", "dim", [](auto& c, auto& v, auto& k) { c.data.dim = parse_size(v, k); }},
    {"data", "heterogeneity", [](auto& c, auto& v, auto& k) { c.data.heterogeneity = parse_number<double>(v, k); }},
    {"data", "class_sep", [](auto& c, auto& v, auto& k) { c.data.class_sep = parse_number<double>(v, k); }},
    {"data", "test_fraction", [](auto& c, auto& v, auto& k) { c.data.test_fraction = parse_number<double>(v, k); }},
    {"data", "label_ratio", [](auto& c, auto& v, auto& k) { c.data.label_ratio = parse_number<double>(v, k); }},
    {"model", "base_hidden",
     [](auto& c, auto& v, auto& k) {
         c.model.base_hidden.clear();
         for (const auto& w : split_list(v)) c.model.base_hidden.push_back(parse_size(w, k));
         if (c.model.base_hidden.empty()) throw ConfigError("needs at least one width", k);
     }},
    {"hyper", "eta", [](auto& c, auto& v, auto& k) { c.hyper.eta = parse_number<double>(v, k); }},
    {"hyper", "mu", [](auto& c, auto& v, auto& k) { c.hyper.mu = parse_number<double>(v, k); }},
    {"hyper", "lambda_c", [](auto& c, auto& v, auto& k) { c.hyper.lambda_c = parse_number<double>(v, k); }},
    {"hyper", "rounds", [](auto& c, auto& v, auto& k) { c.hyper.rounds = parse_size(v, k); }},
    {"hyper", "local_epochs", [](auto& c, auto& v, auto& k) { c.hyper.local_epochs = parse_size(v, k); }},
    {"hyper", "batch_size", [](auto& c, auto& v, auto& k) { c.hyper.batch_size = parse_size(v, k); }},
    {"hyper", "fml_weight", [](auto& c, auto& v, auto& k) { c.hyper.fml_weight = parse_number<double>(v, k); }},
    {"run", "algorithms",
     [](auto& c, auto& v, auto&) {
         c.algorithms.clear();
         for (const auto& name : split_list(v)) c.algorithms.push_back(parse_algorithm(name));
     }},
    {"run", "seeds",
     [](auto& c, auto& v, auto& k) {
         c.seeds.clear();
         for (const auto& s : split_list(v)) c.seeds.push_back(parse_number<std::uint64_t>(s, k));
     }},
    {"run", "output_dir", [](auto& c, auto& v, auto&) { c.output_dir = trim(v); }},
    {"run", "workers", [](auto& c, auto& v, auto& k) { c.workers = parse_size(v, k); }},
};

}  // namespace

void ExperimentConfig::validate() const {
    data.validate();
    hyper.validate();
    if (model.input_dim != data.dim) throw ConfigError("model input width must equal data dim", "dim");
    model.validate();
    if (algorithms.empty()) throw ConfigError("at least one algorithm is required", "algorithms");
    if (seeds.empty()) throw ConfigError("at least one seed is required", "seeds");
    if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size())
        throw ConfigError("seeds must be distinct", "seeds");
    if (output_dir.empty()) throw ConfigError("must not be empty", "output_dir");
    if (workers < 1) throw ConfigError("must be >= 1", "workers");
}

ExperimentConfig parse_config(const std::string& text) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
    }

    ExperimentConfig config;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) throw ConfigError("key outside any section", section);
        const bool known_section = std::any_of(std::begin(kKeys), std::end(kKeys),
                                               [&](const KeyDef& d) { return section == d.section; });
        if (!known_section) throw ConfigError("unknown section", section);
        for (const auto& [key, node] : body) {
            const auto* def = std::find_if(std::begin(kKeys), std::end(kKeys),
                                           [&](const KeyDef& d) { return section == d.section && key == d.key; });
            if (def == std::end(kKeys)) throw ConfigError("unknown key", section + "." + key);
            def->set(config, node.data(), key);
        }
    }
    config.model.input_dim = config.data.dim;
    config.model.feature_dim = config.model.base_hidden.back();
    config.validate();
    return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    return parse_config(text.str());
}

std::string format_config(const ExperimentConfig& c) {
    std::ostringstream out;
    out << "[data]\n"
        << "clients = " << c.data.clients << '\n'
        << "samples_per_client = " << c.data.samples_per_client << '\n'
        << "dim = " << c.data.dim << '\n'
        << "heterogeneity = " << fmt(c.data.heterogeneity) << '\n'
        << "class_sep = " << fmt(c.data.class_sep) << '\n'
        << "test_fraction = " << fmt(c.data.test_fraction) << '\n'
        << "label_ratio = " << fmt(c.data.label_ratio) << "\n\n"
        << "[model]\n"
        << "base_hidden = " << join(c.model.base_hidden) << "\n\n"
        << "[hyper]\n"
        << "eta = " << fmt(c.hyper.eta) << '\n'
        << "mu = " << fmt(c.hyper.mu) << '\n'
        << "lambda_c = " << fmt(c.hyper.lambda_c) << '\n'
        << "rounds = " << c.hyper.rounds << '\n'
        << "local_epochs = " << c.hyper.local_epochs << '\n'
        << "batch_size = " << c.hyper.batch_size << '\n'
        << "fml_weight = " << fmt(c.hyper.fml_weight) << "\n\n"
        << "[run]\n"
        << "algorithms = " << join(c.algorithms) << '\n'
        << "seeds = " << join(c.seeds) << '\n'
        << "output_dir = " << c.output_dir.string() << '\n'
        << "workers = " << c.workers << '\n';
    return out.str();
}

}  // namespace fedl2t

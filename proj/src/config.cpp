// Copyright 2026 The Retain Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "retain/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <yaml-cpp/yaml.h>

#include "retain/errors.hpp"
#include "retain/text.hpp"

namespace retain::config {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kFilePrefix = "file://";

bool is_placeholder_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '-' || c == '.';
}

/// One `{{name}}` occurrence within a template.
struct Placeholder {
    std::size_t begin;
    std::size_t end; // one past the closing braces
    std::string name;
};

std::vector<Placeholder> scan_placeholders(std::string_view text) {
    std::vector<Placeholder> found;
    std::size_t pos = 0;
    while ((pos = text.find("{{", pos)) != std::string_view::npos) {
        auto close = text.find("}}", pos + 2);
        if (close == std::string_view::npos) break;
        auto name = text::trim(text.substr(pos + 2, close - pos - 2));
        if (!name.empty() && std::all_of(name.begin(), name.end(), is_placeholder_char)) {
            found.push_back({pos, close + 2, std::move(name)});
            pos = close + 2;
        } else {
            pos += 2;
        }
    }
    return found;
}

std::string scalar(const YAML::Node& node, const std::string& where) {
    if (!node.IsScalar()) throw ValidationError(where + " must be a scalar");
    return node.as<std::string>();
}

ProviderSpec parse_provider(const YAML::Node& node, const std::string& where) {
    ProviderSpec spec;
    if (node.IsScalar()) {
        spec.id = node.as<std::string>();
    } else if (node.IsMap()) {
        if (!node["id"]) throw ValidationError(where + " is missing 'id'");
        spec.id = scalar(node["id"], where + ".id");
        if (auto kind = node["kind"]) {
            auto k = scalar(kind, where + ".kind");
            if (k == "chat") {
                spec.kind = ProviderKind::Chat;
            } else if (k == "scripted") {
                spec.kind = ProviderKind::Scripted;
            } else {
                throw ValidationError(where + ".kind must be 'chat' or 'scripted', got '" + k + "'");
            }
        }
        if (auto env = node["credentials_env"]) spec.credentials_env = scalar(env, where + ".credentials_env");
        if (auto url = node["base_url"]) spec.base_url = scalar(url, where + ".base_url");
        if (auto t = node["temperature"]) {
            try {
                spec.temperature = t.as<double>();
            } catch (const YAML::Exception&) {
                throw ValidationError(where + ".temperature must be a number");
            }
        }
        if (auto s = node["script"]) {
            auto path = scalar(s, where + ".script");
            if (path.starts_with(kFilePrefix)) path = path.substr(kFilePrefix.size());
            spec.script = path;
        }
        if (auto n = node["max_in_flight"]) {
            try {
                spec.max_in_flight = n.as<int>();
            } catch (const YAML::Exception&) {
                throw ValidationError(where + ".max_in_flight must be an integer");
            }
        }
    } else {
        throw ValidationError(where + " must be a string or a map");
    }
    if (spec.credentials_env.empty()) spec.credentials_env = default_credentials_env(spec.id);
    return spec;
}

AssertionSpec parse_assertion(const YAML::Node& node, const std::string& where) {
    if (!node.IsMap()) throw ValidationError(where + " must be a map with 'type' and 'value'");
    if (!node["type"]) throw ValidationError(where + " is missing 'type'");
    auto type_name = scalar(node["type"], where + ".type");
    auto type = parse_assertion_type(type_name);
    if (!type) throw ValidationError(where + ": unknown assertion type '" + type_name + "'");
    if (!node["value"]) throw ValidationError(where + " is missing 'value'");
    AssertionSpec spec{*type, scalar(node["value"], where + ".value"), std::nullopt};
    if (auto p = node["provider"]) spec.provider = scalar(p, where + ".provider");
    return spec;
}

TestCase parse_test(const YAML::Node& node, int index) {
    auto where = fmt::format("tests[{}]", index);
    if (!node.IsMap()) throw ValidationError(where + " must be a map");
    TestCase test;
    test.id = index;
    const auto& vars = node["vars"];
    if (vars && vars.IsMap()) {
        for (const auto& kv : vars) {
            auto name = kv.first.as<std::string>();
            test.vars[name] = scalar(kv.second, where + ".vars." + name);
        }
    } else if (vars && !vars.IsNull()) {
        throw ValidationError(where + ".vars must be a map");
    }
    // Flattened form: scalar keys written beside an empty `vars:` are vars.
    for (const auto& kv : node) {
        auto key = kv.first.as<std::string>();
        if (key == "vars" || key == "assert") continue;
        if (!kv.second.IsScalar()) throw ValidationError(where + ": unexpected key '" + key + "'");
        if (vars && vars.IsMap()) throw ValidationError(where + ": unexpected key '" + key + "'");
        test.vars[key] = kv.second.as<std::string>();
    }
    if (auto asserts = node["assert"]) {
        if (!asserts.IsSequence()) throw ValidationError(where + ".assert must be a list");
        int i = 0;
        for (const auto& a : asserts) {
            test.assertions.push_back(parse_assertion(a, fmt::format("{}.assert[{}]", where, i++)));
        }
    }
    return test;
}

std::string format_double(double v) {
    auto s = fmt::format("{}", v);
    if (s.find_first_of(".eE") == std::string::npos && s.find("inf") == std::string::npos &&
        s.find("nan") == std::string::npos) {
        s += ".0";
    }
    return s;
}

void emit_provider(YAML::Emitter& out, const ProviderSpec& p) {
    out << YAML::BeginMap;
    out << YAML::Key << "id" << YAML::Value << YAML::DoubleQuoted << p.id;
    out << YAML::Key << "kind" << YAML::Value << (p.kind == ProviderKind::Chat ? "chat" : "scripted");
    out << YAML::Key << "credentials_env" << YAML::Value << YAML::DoubleQuoted << p.credentials_env;
    if (p.base_url) out << YAML::Key << "base_url" << YAML::Value << YAML::DoubleQuoted << *p.base_url;
    out << YAML::Key << "temperature" << YAML::Value << format_double(p.temperature);
    if (p.script) out << YAML::Key << "script" << YAML::Value << YAML::DoubleQuoted << *p.script;
    out << YAML::Key << "max_in_flight" << YAML::Value << p.max_in_flight;
    out << YAML::EndMap;
}

} // namespace

std::string_view to_string(AssertionType t) {
    switch (t) {
    case AssertionType::Bleu: return "bleu";
    case AssertionType::Similarity: return "similarity";
    case AssertionType::LlmJudge: return "llm-judge";
    }
    return "unknown";
}

std::optional<AssertionType> parse_assertion_type(std::string_view name) {
    if (name == "bleu") return AssertionType::Bleu;
    if (name == "similarity" || name == "bertscore") return AssertionType::Similarity;
    if (name == "llm-judge" || name == "llm-rubric") return AssertionType::LlmJudge;
    return std::nullopt;
}

std::vector<std::string> PromptTemplate::placeholders() const {
    std::vector<std::string> names;
    for (auto& p : scan_placeholders(text)) {
        if (std::find(names.begin(), names.end(), p.name) == names.end()) names.push_back(p.name);
    }
    return names;
}

std::string ProviderSpec::family() const {
    auto colon = id.find(':');
    return colon == std::string::npos ? id : id.substr(0, colon);
}

std::string ProviderSpec::model() const {
    auto colon = id.find(':');
    return colon == std::string::npos ? id : id.substr(colon + 1);
}

std::string default_credentials_env(std::string_view provider_id) {
    auto family = std::string(provider_id.substr(0, provider_id.find(':')));
    for (auto& c : family) {
        if (c == '-' || c == '.') {
            c = '_';
        } else {
            c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        }
    }
    return family + "_API_KEY";
}

double MetricDefaults::tolerance_for(const std::string& metric) const {
    auto it = per_metric.find(metric);
    return it == per_metric.end() ? tolerance : it->second;
}

const PromptTemplate* EvalConfig::find_prompt(std::string_view id) const {
    for (const auto& p : prompts) {
        if (p.id == id) return &p;
    }
    return nullptr;
}

const ProviderSpec* EvalConfig::find_provider(std::string_view id) const {
    for (const auto& p : providers) {
        if (p.id == id) return &p;
    }
    return nullptr;
}

void validate(const EvalConfig& cfg) {
    if (cfg.prompts.empty()) throw ValidationError("config needs at least 1 prompt");
    if (cfg.providers.empty()) throw ValidationError("config needs at least 1 provider");
    if (cfg.tests.empty()) throw ValidationError("config needs at least 1 test");

    std::set<std::string> seen;
    for (const auto& p : cfg.prompts) {
        if (p.id.empty()) throw ValidationError("prompt id must be non-empty");
        if (!seen.insert(p.id).second) throw ValidationError("duplicate prompt id '" + p.id + "'");
        if (p.version < 1) throw ValidationError("prompt '" + p.id + "' has version < 1");
    }
    seen.clear();
    auto check_provider = [](const ProviderSpec& p) {
        if (p.id.empty()) throw ValidationError("provider id must be non-empty");
        if (p.temperature < 0.0) throw ValidationError("provider '" + p.id + "' has negative temperature");
        if (p.max_in_flight < 1) throw ValidationError("provider '" + p.id + "' needs max_in_flight >= 1");
        if (p.kind == ProviderKind::Scripted && !p.script) {
            throw ValidationError("scripted provider '" + p.id + "' needs a 'script'");
        }
    };
    for (const auto& p : cfg.providers) {
        check_provider(p);
        if (!seen.insert(p.id).second) throw ValidationError("duplicate provider id '" + p.id + "'");
    }
    for (const auto& [role, p] : cfg.roles) check_provider(p);

    for (std::size_t i = 0; i < cfg.tests.size(); ++i) {
        if (cfg.tests[i].id != static_cast<int>(i)) {
            throw ValidationError(fmt::format("test at position {} has id {}", i, cfg.tests[i].id));
        }
    }
    for (const auto& p : cfg.prompts) {
        for (const auto& name : p.placeholders()) {
            for (const auto& t : cfg.tests) {
                if (!t.vars.contains(name)) {
                    throw ValidationError(fmt::format("prompt '{}' uses {{{{{}}}}} but test {} has no var '{}'",
                                                      p.id, name, t.id, name));
                }
            }
        }
    }
    if (cfg.defaults.tolerance < 0.0) throw ValidationError("default tolerance must be >= 0");
    for (const auto& [metric, eps] : cfg.defaults.per_metric) {
        if (eps < 0.0) throw ValidationError("tolerance for '" + metric + "' must be >= 0");
    }
}

EvalConfig parse_config(std::string_view raw) {
    YAML::Node root;
    try {
        root = YAML::Load(std::string(raw));
    } catch (const YAML::Exception& e) {
        throw SyntaxError(std::string("malformed config: ") + e.what());
    }
    if (!root.IsMap()) throw ValidationError("config must be a map with 'prompts', 'providers', 'tests'");

    EvalConfig cfg;
    try {
        for (const char* section : {"prompts", "providers", "tests"}) {
            if (!root[section]) throw ValidationError(std::string("missing section '") + section + "'");
            if (!root[section].IsSequence() && !root[section].IsNull()) {
                throw ValidationError(std::string("section '") + section + "' must be a list");
            }
        }

        int index = 0;
        for (const auto& node : root["prompts"]) {
            ++index;
            PromptTemplate p;
            if (node.IsScalar()) {
                p.id = fmt::format("p{}", index);
                p.text = node.as<std::string>();
            } else if (node.IsMap()) {
                p.id = node["id"] ? scalar(node["id"], "prompt.id") : fmt::format("p{}", index);
                if (!node["text"]) throw ValidationError("prompt '" + p.id + "' is missing 'text'");
                p.text = scalar(node["text"], "prompt.text");
                if (node["version"]) p.version = node["version"].as<int>();
            } else {
                throw ValidationError("prompts must be strings or maps");
            }
            cfg.prompts.push_back(std::move(p));
        }

        index = 0;
        for (const auto& node : root["providers"]) {
            cfg.providers.push_back(parse_provider(node, fmt::format("providers[{}]", index++)));
        }

        index = 0;
        for (const auto& node : root["tests"]) cfg.tests.push_back(parse_test(node, index++));

        if (auto roles = root["roles"]) {
            if (!roles.IsMap()) throw ValidationError("'roles' must be a map");
            for (const auto& kv : roles) {
                auto role = kv.first.as<std::string>();
                cfg.roles[role] = parse_provider(kv.second, "roles." + role);
            }
        }

        if (auto defaults = root["defaults"]) {
            if (!defaults.IsMap()) throw ValidationError("'defaults' must be a map");
            if (auto t = defaults["tolerance"]) cfg.defaults.tolerance = t.as<double>();
            if (auto per = defaults["tolerances"]) {
                if (!per.IsMap()) throw ValidationError("'defaults.tolerances' must be a map");
                for (const auto& kv : per) cfg.defaults.per_metric[kv.first.as<std::string>()] = kv.second.as<double>();
            }
        }
    } catch (const YAML::Exception& e) {
        throw ValidationError(std::string("invalid config value: ") + e.what());
    }

    validate(cfg);
    return cfg;
}

std::string serialize_config(const EvalConfig& cfg) {
    YAML::Emitter out;
    out << YAML::BeginMap;

    out << YAML::Key << "prompts" << YAML::Value << YAML::BeginSeq;
    for (const auto& p : cfg.prompts) {
        out << YAML::BeginMap;
        out << YAML::Key << "id" << YAML::Value << YAML::DoubleQuoted << p.id;
        out << YAML::Key << "version" << YAML::Value << p.version;
        out << YAML::Key << "text" << YAML::Value << YAML::DoubleQuoted << p.text;
        out << YAML::EndMap;
    }
    out << YAML::EndSeq;

    out << YAML::Key << "providers" << YAML::Value << YAML::BeginSeq;
    for (const auto& p : cfg.providers) emit_provider(out, p);
    out << YAML::EndSeq;

    if (!cfg.roles.empty()) {
        out << YAML::Key << "roles" << YAML::Value << YAML::BeginMap;
        for (const auto& [role, p] : cfg.roles) {
            out << YAML::Key << role << YAML::Value;
            emit_provider(out, p);
        }
        out << YAML::EndMap;
    }

    out << YAML::Key << "defaults" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "tolerance" << YAML::Value << format_double(cfg.defaults.tolerance);
    if (!cfg.defaults.per_metric.empty()) {
        out << YAML::Key << "tolerances" << YAML::Value << YAML::BeginMap;
        for (const auto& [metric, eps] : cfg.defaults.per_metric) {
            out << YAML::Key << YAML::DoubleQuoted << metric << YAML::Value << format_double(eps);
        }
        out << YAML::EndMap;
    }
    out << YAML::EndMap;

    out << YAML::Key << "tests" << YAML::Value << YAML::BeginSeq;
    for (const auto& t : cfg.tests) {
        out << YAML::BeginMap;
        out << YAML::Key << "vars" << YAML::Value << YAML::BeginMap;
        for (const auto& [name, value] : t.vars) {
            out << YAML::Key << YAML::DoubleQuoted << name << YAML::Value << YAML::DoubleQuoted << value;
        }
        out << YAML::EndMap;
        out << YAML::Key << "assert" << YAML::Value << YAML::BeginSeq;
        for (const auto& a : t.assertions) {
            out << YAML::BeginMap;
            out << YAML::Key << "type" << YAML::Value << std::string(to_string(a.type));
            out << YAML::Key << "value" << YAML::Value << YAML::DoubleQuoted << a.value;
            if (a.provider) out << YAML::Key << "provider" << YAML::Value << YAML::DoubleQuoted << *a.provider;
            out << YAML::EndMap;
        }
        out << YAML::EndSeq;
        out << YAML::EndMap;
    }
    out << YAML::EndSeq;

    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

EvalConfig resolve_file_refs(const EvalConfig& cfg, const fs::path& root) {
    EvalConfig resolved = cfg;
    for (auto& test : resolved.tests) {
        for (auto& [name, value] : test.vars) {
            if (!value.starts_with(kFilePrefix)) continue;
            fs::path target(value.substr(kFilePrefix.size()));
            if (target.is_relative()) target = root / target;
            std::ifstream in(target, std::ios::binary);
            if (!in || fs::is_directory(target)) throw FileNotFound(name, target.string());
            std::ostringstream buf;
            buf << in.rdbuf();
            value = buf.str();
            if (value.starts_with(kFilePrefix)) {
                throw ValidationError("file '" + target.string() + "' for var '" + name +
                                      "' itself starts with file://");
            }
        }
    }
    auto absolutize = [&](ProviderSpec& p) {
        if (p.script && fs::path(*p.script).is_relative()) p.script = (root / *p.script).lexically_normal().string();
    };
    for (auto& p : resolved.providers) absolutize(p);
    for (auto& [role, p] : resolved.roles) absolutize(p);
    return resolved;
}

std::string render_prompt(const PromptTemplate& tmpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    std::size_t last = 0;
    for (const auto& ph : scan_placeholders(tmpl.text)) {
        auto it = vars.find(ph.name);
        if (it == vars.end()) {
            throw MissingVar("prompt '" + tmpl.id + "' needs var '" + ph.name + "'");
        }
        out.append(tmpl.text, last, ph.begin - last);
        out += it->second;
        last = ph.end;
    }
    out.append(tmpl.text, last, std::string::npos);
    return out;
}

std::string compose_prompt(const PromptTemplate& tmpl, const std::map<std::string, std::string>& vars) {
    if (!scan_placeholders(tmpl.text).empty()) return render_prompt(tmpl, vars);
    std::string out = tmpl.text;
    for (const auto& [name, value] : vars) out += "\n\n" + value;
    return out;
}

EvalConfig load_config_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IOError("cannot read config '" + path.string() + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    auto cfg = parse_config(buf.str());
    auto root = path.has_parent_path() ? path.parent_path() : fs::current_path();
    return resolve_file_refs(cfg, fs::absolute(root));
}

} // namespace retain::config

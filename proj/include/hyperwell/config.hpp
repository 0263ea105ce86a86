#pragma once

// Plain-text key/value config with [sections]; used for scene, device,
// program and campaign definitions. Repeated keys are kept in order (step
// and transition lists rely on that).

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hyperwell/errors.hpp"
#include "hyperwell/hypercube.hpp"

namespace hyperwell::config {

struct Section {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;

    std::optional<std::string> get(const std::string& key) const {
        std::optional<std::string> found;
        for (const auto& [k, v] : entries)
            if (k == key) found = v;
        return found;
    }

    std::vector<std::string> get_all(const std::string& key) const {
        std::vector<std::string> out;
        for (const auto& [k, v] : entries)
            if (k == key) out.push_back(v);
        return out;
    }

    std::string require_value(const std::string& key) const {
        auto v = get(key);
        require(v.has_value(), ErrorKind::Config,
                "section [" + name + "] is missing required key '" + key + "'");
        return *v;
    }

    double get_double(const std::string& key, std::optional<double> fallback = std::nullopt) const {
        auto v = get(key);
        if (!v) {
            require(fallback.has_value(), ErrorKind::Config,
                    "section [" + name + "] is missing numeric key '" + key + "'");
            return *fallback;
        }
        try {
            std::size_t used = 0;
            const double d = std::stod(*v, &used);
            require(used == v->size(), ErrorKind::Config, "trailing junk");
            return d;
        } catch (const std::exception&) {
            raise(ErrorKind::Config,
                  "section [" + name + "] key '" + key + "': not a number: '" + *v + "'");
        }
    }

    long get_int(const std::string& key, std::optional<long> fallback = std::nullopt) const {
        auto v = get(key);
        if (!v) {
            require(fallback.has_value(), ErrorKind::Config,
                    "section [" + name + "] is missing integer key '" + key + "'");
            return *fallback;
        }
        try {
            std::size_t used = 0;
            const long n = std::stol(*v, &used);
            require(used == v->size(), ErrorKind::Config, "trailing junk");
            return n;
        } catch (const std::exception&) {
            raise(ErrorKind::Config,
                  "section [" + name + "] key '" + key + "': not an integer: '" + *v + "'");
        }
    }
};

struct ConfigFile {
    std::vector<Section> sections;

    const Section* find(const std::string& name) const {
        for (const auto& s : sections)
            if (s.name == name) return &s;
        return nullptr;
    }

    const Section& require_section(const std::string& name) const {
        const Section* s = find(name);
        require(s != nullptr, ErrorKind::Config, "missing required section [" + name + "]");
        return *s;
    }

    // All sections whose name starts with "<prefix> ", e.g. prefix "device".
    std::vector<const Section*> sections_with_prefix(const std::string& prefix) const {
        std::vector<const Section*> out;
        for (const auto& s : sections)
            if (s.name.rfind(prefix + " ", 0) == 0) out.push_back(&s);
        return out;
    }
};

inline ConfigFile parse_config(const std::string& text, const std::string& origin = "<string>") {
    ConfigFile cfg;
    cfg.sections.push_back({"", {}}); // global scope
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = cube::detail::trim(raw);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        if (line.front() == '[') {
            require(line.back() == ']', ErrorKind::Config,
                    origin + ":" + std::to_string(line_no) + ": unterminated section header");
            cfg.sections.push_back({cube::detail::trim(line.substr(1, line.size() - 2)), {}});
            continue;
        }
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorKind::Config,
                origin + ":" + std::to_string(line_no) + ": expected 'key = value', got '" + line +
                    "'");
        const std::string key = cube::detail::trim(line.substr(0, eq));
        const std::string value = cube::detail::trim(line.substr(eq + 1));
        require(!key.empty(), ErrorKind::Config,
                origin + ":" + std::to_string(line_no) + ": empty key");
        cfg.sections.back().entries.emplace_back(key, value);
    }
    return cfg;
}

inline ConfigFile load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Io, "cannot open config file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.filename().string());
}

} // namespace hyperwell::config

#include "rotlab/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "rotlab/hash.hpp"

namespace rotlab {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    const std::string last = trim(cur);
    if (!last.empty() || !out.empty()) out.push_back(last);
    return out;
}

}  // namespace

KvConfig KvConfig::parse_text(const std::string& text) {
    KvConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" +
                              line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        }
        cfg.set(key, value);
    }
    return cfg;
}

KvConfig KvConfig::parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_text(ss.str());
}

bool KvConfig::has(const std::string& key) const { return lookup(key) != nullptr; }

void KvConfig::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = value;
            return;
        }
    }
    entries_.emplace_back(key, value);
}

const std::string* KvConfig::lookup(const std::string& key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) return &v;
    }
    return nullptr;
}

std::string KvConfig::get_string(const std::string& key) const {
    const std::string* v = lookup(key);
    if (!v) throw ConfigError("missing required key '" + key + "'");
    return *v;
}

std::string KvConfig::get_string(const std::string& key, const std::string& fallback) const {
    const std::string* v = lookup(key);
    return v ? *v : fallback;
}

long long KvConfig::get_int(const std::string& key) const {
    const std::string s = get_string(key);
    long long out = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw ConfigError("key '" + key + "': '" + s + "' is not an integer");
    }
    return out;
}

long long KvConfig::get_int(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

double KvConfig::get_double(const std::string& key) const {
    const std::string s = get_string(key);
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("key '" + key + "': '" + s + "' is not a number");
    }
}

double KvConfig::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool KvConfig::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string s = get_string(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("key '" + key + "': '" + s + "' is not a boolean");
}

std::vector<int> KvConfig::get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (const std::string& item : split_list(get_string(key))) {
        int v = 0;
        const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (ec != std::errc() || p != item.data() + item.size()) {
            throw ConfigError("key '" + key + "': '" + item + "' is not an integer");
        }
        out.push_back(v);
    }
    return out;
}

std::vector<double> KvConfig::get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& item : split_list(get_string(key))) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stod(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': '" + item + "' is not a number");
        }
    }
    return out;
}

std::vector<std::string> KvConfig::get_string_list(const std::string& key) const {
    return split_list(get_string(key));
}

std::vector<std::string> KvConfig::keys() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
}

std::string KvConfig::canonical_text() const {
    std::vector<std::pair<std::string, std::string>> sorted = entries_;
    std::sort(sorted.begin(), sorted.end());
    std::string out;
    for (const auto& [k, v] : sorted) {
        out += k;
        out += " = ";
        out += v;
        out += "\n";
    }
    return out;
}

std::uint64_t KvConfig::canonical_hash() const { return fnv1a64(canonical_text()); }

std::vector<std::string> validate_schema(const KvConfig& cfg, const std::vector<FieldSpec>& schema) {
    std::vector<std::string> violations;
    for (const FieldSpec& f : schema) {
        if (!cfg.has(f.key)) {
            if (f.required) violations.push_back("missing required key '" + f.key + "'");
            continue;
        }
        try {
            switch (f.type) {
                case FieldType::Int: cfg.get_int(f.key); break;
                case FieldType::Double: cfg.get_double(f.key); break;
                case FieldType::Bool: cfg.get_bool(f.key, false); break;
                case FieldType::String: cfg.get_string(f.key); break;
                case FieldType::IntList: cfg.get_int_list(f.key); break;
                case FieldType::DoubleList: cfg.get_double_list(f.key); break;
                case FieldType::StringList: cfg.get_string_list(f.key); break;
            }
        } catch (const ConfigError& e) {
            violations.emplace_back(e.what());
        }
    }
    for (const std::string& key : cfg.keys()) {
        const bool known = std::any_of(schema.begin(), schema.end(),
                                       [&](const FieldSpec& f) { return f.key == key; });
        if (!known) violations.push_back("unknown key '" + key + "'");
    }
    return violations;
}

}  // namespace rotlab

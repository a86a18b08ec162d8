#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rotlab/errors.hpp"

namespace rotlab {

// Flat "key = value" text config. '#' starts a comment; keys keep insertion
// order for echoing, but hashing and canonical text sort them so key order
// never changes a config's identity.
class KvConfig {
public:
    static KvConfig parse_text(const std::string& text);
    static KvConfig parse_file(const std::string& path);

    bool has(const std::string& key) const;
    void set(const std::string& key, const std::string& value);

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    long long get_int(const std::string& key) const;
    long long get_int(const std::string& key, long long fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_int_list(const std::string& key) const;
    std::vector<double> get_double_list(const std::string& key) const;
    std::vector<std::string> get_string_list(const std::string& key) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
    std::vector<std::string> keys() const;

    // sorted "key = value" lines; two semantically identical configs produce
    // identical text and hash
    std::string canonical_text() const;
    std::uint64_t canonical_hash() const;

private:
    const std::string* lookup(const std::string& key) const;
    std::vector<std::pair<std::string, std::string>> entries_;
};

enum class FieldType { Int, Double, Bool, String, IntList, DoubleList, StringList };

struct FieldSpec {
    std::string key;
    FieldType type;
    bool required = false;
};

// Returns every violation: missing required keys, unparseable values, and
// unknown keys not covered by the schema.
std::vector<std::string> validate_schema(const KvConfig& cfg, const std::vector<FieldSpec>& schema);

}  // namespace rotlab

#pragma once

#include <map>
#include <string>
#include <vector>

namespace bevpred {

/// Plain-text config format: `[section]` headers followed by `key=value`
/// lines. `#` starts a comment. Keys before any header land in section "".
/// Repeated section names are kept in file order.
struct KvSection {
    std::string name;
    std::vector<std::pair<std::string, std::string>> entries;

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;
    long get_int(const std::string& key) const;
    long get_int_or(const std::string& key, long fallback) const;
    /// Comma- or space-separated list of reals.
    std::vector<double> get_doubles(const std::string& key) const;

    void set(const std::string& key, const std::string& value);
    void set_double(const std::string& key, double value);
    void set_int(const std::string& key, long value);
};

struct KvFile {
    std::vector<KvSection> sections;

    static KvFile parse(const std::string& text);
    static KvFile load(const std::string& path);
    std::string serialize() const;
    void save(const std::string& path) const;

    const KvSection* find(const std::string& name) const;
    std::vector<const KvSection*> find_all(const std::string& prefix) const;
    KvSection& add(const std::string& name);
};

std::vector<double> parse_double_list(const std::string& text);
std::string format_double(double v);

} // namespace bevpred

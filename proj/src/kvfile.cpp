#include "bevpred/kvfile.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace bevpred {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

} // namespace

bool KvSection::has(const std::string& key) const {
    for (const auto& [k, v] : entries) {
        if (k == key) return true;
    }
    return false;
}

const std::string& KvSection::get(const std::string& key) const {
    for (const auto& [k, v] : entries) {
        if (k == key) return v;
    }
    throw std::runtime_error("missing key '" + key + "' in section [" + name + "]");
}

std::string KvSection::get_or(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key) : fallback;
}

double KvSection::get_double(const std::string& key) const {
    const std::string& s = get(key);
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (trim(s.substr(used)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw std::runtime_error("key '" + key + "' in [" + name + "] is not a real: '" + s + "'");
}

double KvSection::get_double_or(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

long KvSection::get_int(const std::string& key) const {
    const std::string& s = get(key);
    try {
        std::size_t used = 0;
        const long v = std::stol(s, &used);
        if (trim(s.substr(used)).empty()) return v;
    } catch (const std::exception&) {
    }
    throw std::runtime_error("key '" + key + "' in [" + name + "] is not an integer: '" + s + "'");
}

long KvSection::get_int_or(const std::string& key, long fallback) const {
    return has(key) ? get_int(key) : fallback;
}

std::vector<double> KvSection::get_doubles(const std::string& key) const {
    return parse_double_list(get(key));
}

void KvSection::set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : entries) {
        if (k == key) {
            v = value;
            return;
        }
    }
    entries.emplace_back(key, value);
}

void KvSection::set_double(const std::string& key, double value) { set(key, format_double(value)); }

void KvSection::set_int(const std::string& key, long value) { set(key, std::to_string(value)); }

KvFile KvFile::parse(const std::string& text) {
    KvFile f;
    f.sections.push_back(KvSection{"", {}});
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw std::runtime_error("line " + std::to_string(lineno) +
                                         ": unterminated section header");
            }
            f.sections.push_back(KvSection{trim(line.substr(1, line.size() - 2)), {}});
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("line " + std::to_string(lineno) + ": expected key=value");
        }
        f.sections.back().entries.emplace_back(trim(line.substr(0, eq)),
                                               trim(line.substr(eq + 1)));
    }
    return f;
}

KvFile KvFile::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw std::runtime_error("cannot open: " + path);
    }
    std::stringstream buf;
    buf << is.rdbuf();
    return parse(buf.str());
}

std::string KvFile::serialize() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& sec : sections) {
        if (sec.name.empty() && sec.entries.empty()) continue;
        if (!sec.name.empty()) {
            if (!first) os << "\n";
            os << "[" << sec.name << "]\n";
        }
        for (const auto& [k, v] : sec.entries) {
            os << k << "=" << v << "\n";
        }
        first = false;
    }
    return os.str();
}

void KvFile::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    os << serialize();
}

const KvSection* KvFile::find(const std::string& name) const {
    for (const auto& sec : sections) {
        if (sec.name == name) return &sec;
    }
    return nullptr;
}

std::vector<const KvSection*> KvFile::find_all(const std::string& prefix) const {
    std::vector<const KvSection*> out;
    for (const auto& sec : sections) {
        if (sec.name.rfind(prefix, 0) == 0) out.push_back(&sec);
    }
    return out;
}

KvSection& KvFile::add(const std::string& name) {
    sections.push_back(KvSection{name, {}});
    return sections.back();
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::string token;
    std::istringstream is(text);
    while (std::getline(is, token, ',')) {
        std::istringstream ts(token);
        std::string word;
        while (ts >> word) {
            out.push_back(std::stod(word));
        }
    }
    return out;
}

std::string format_double(double v) {
    // Shortest representation that round-trips the exact double.
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    for (int prec = 1; prec < 17; ++prec) {
        char probe[32];
        std::snprintf(probe, sizeof probe, "%.*g", prec, v);
        if (std::stod(probe) == v) return probe;
    }
    return buf;
}

} // namespace bevpred

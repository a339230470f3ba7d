#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fmanet {

// Plain-text config: `[section]` headers nest keys as "section.key"; `#` or `;`
// start comments. The raw text is kept so checkpoints can echo it verbatim.
class Config {
public:
    Config() = default;

    static Config parse(const std::string& text);
    static Config load(const std::string& path);

    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    std::string get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& dflt) const;
    long get_int(const std::string& key) const;
    long get_int(const std::string& key, long dflt) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double dflt) const;
    bool get_bool(const std::string& key, bool dflt) const;

    void set(const std::string& key, const std::string& value);

    const std::map<std::string, std::string>& entries() const { return kv_; }
    const std::string& text() const { return text_; }

    // Hash of the sorted key=value pairs, independent of comments/whitespace.
    std::uint64_t hash() const;
    std::string hash_hex() const;

private:
    std::map<std::string, std::string> kv_;
    std::string text_;
};

}  // namespace fmanet

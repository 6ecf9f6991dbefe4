#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace f2bev {

// Plain-text `key = value` documents shared by calibration, model config and
// dataset metadata files. `#` starts a comment, blank lines are skipped and
// whitespace around keys and values is ignored.
class KeyValueFile {
public:
    KeyValueFile() = default;

    static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");
    static KeyValueFile load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.contains(key); }
    const std::string& str(const std::string& key) const;
    double number(const std::string& key) const;
    double number_or(const std::string& key, double fallback) const;
    int integer(const std::string& key) const;
    int integer_or(const std::string& key, int fallback) const;
    std::vector<double> numbers(const std::string& key) const;

    void set(const std::string& key, std::string value);
    std::string serialize() const;
    void save(const std::filesystem::path& path) const;

    const std::string& origin() const { return origin_; }
    std::vector<std::string> keys() const;

private:
    std::string origin_;
    std::vector<std::string> order_;
    std::map<std::string, std::string> values_;
};

// Splits on whitespace and/or commas: "0, 0.25 1.8" -> {0, 0.25, 1.8}.
std::vector<double> parse_number_list(const std::string& text);

}  // namespace f2bev

#include "f2bev/keyvalue.hpp"

#include "f2bev/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace f2bev {
namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

double to_double(const std::string& text, const std::string& context) {
    std::size_t used = 0;
    double value = 0.0;
    try {
        value = std::stod(text, &used);
    } catch (const std::exception&) {
        throw ParseError(context + ": expected a number, got '" + text + "'");
    }
    if (trim(text.substr(used)).size() != 0) {
        throw ParseError(context + ": trailing characters in number '" + text + "'");
    }
    return value;
}

}  // namespace

std::vector<double> parse_number_list(const std::string& text) {
    std::string cleaned = text;
    for (char& c : cleaned) {
        if (c == ',') c = ' ';
    }
    std::istringstream in(cleaned);
    std::vector<double> out;
    std::string token;
    while (in >> token) out.push_back(to_double(token, "number list"));
    return out;
}

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
    KeyValueFile file;
    file.origin_ = origin;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": missing '='");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": empty key");
        }
        if (file.values_.contains(key)) {
            throw ParseError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key + "'");
        }
        file.order_.push_back(key);
        file.values_.emplace(std::move(key), std::move(value));
    }
    return file;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str(), path.string());
}

const std::string& KeyValueFile::str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ParseError(origin_ + ": missing key '" + key + "'");
    return it->second;
}

double KeyValueFile::number(const std::string& key) const {
    return to_double(str(key), origin_ + ": key '" + key + "'");
}

double KeyValueFile::number_or(const std::string& key, double fallback) const {
    return has(key) ? number(key) : fallback;
}

int KeyValueFile::integer(const std::string& key) const {
    const std::string& text = str(key);
    int value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ParseError(origin_ + ": key '" + key + "' expects an integer, got '" + text + "'");
    }
    return value;
}

int KeyValueFile::integer_or(const std::string& key, int fallback) const {
    return has(key) ? integer(key) : fallback;
}

std::vector<double> KeyValueFile::numbers(const std::string& key) const {
    return parse_number_list(str(key));
}

void KeyValueFile::set(const std::string& key, std::string value) {
    if (!values_.contains(key)) order_.push_back(key);
    values_[key] = std::move(value);
}

std::string KeyValueFile::serialize() const {
    std::string out;
    for (const auto& key : order_) {
        out += key;
        out += " = ";
        out += values_.at(key);
        out += '\n';
    }
    return out;
}

void KeyValueFile::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << serialize();
}

std::vector<std::string> KeyValueFile::keys() const { return order_; }

}  // namespace f2bev

#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "grreal/errors.hpp"

namespace grreal {

/// Minimal CSV reader for the project's comma-separated formats (no quoting,
/// UTF-8, optional CRLF line endings).
class CsvReader {
public:
    explicit CsvReader(const std::string& path) : in_(path), path_(path) {
        if (!in_) throw data_error("cannot open CSV file: " + path);
    }

    /// Read the next row; returns false at EOF. Blank lines are skipped.
    bool next(std::vector<std::string>& fields) {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            fields.clear();
            std::size_t start = 0;
            while (true) {
                const std::size_t comma = line.find(',', start);
                if (comma == std::string::npos) {
                    fields.push_back(line.substr(start));
                    break;
                }
                fields.push_back(line.substr(start, comma - start));
                start = comma + 1;
            }
            return true;
        }
        return false;
    }

    long line() const { return line_no_; }
    const std::string& path() const { return path_; }

    [[noreturn]] void fail(const std::string& msg) const {
        throw data_error(path_ + ":" + std::to_string(line_no_) + ": " + msg);
    }

    double parse_double(const std::string& s) const {
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) fail("trailing characters in number '" + s + "'");
            return v;
        } catch (const std::invalid_argument&) {
            fail("not a number: '" + s + "'");
        } catch (const std::out_of_range&) {
            fail("number out of range: '" + s + "'");
        }
    }

private:
    std::ifstream in_;
    std::string path_;
    long line_no_ = 0;
};

/// Round-trip-exact formatting for doubles in CSV output (%.17g trimmed).
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    explicit CsvWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw data_error("cannot open CSV file for writing: " + path);
    }

    void row(const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ',';
            out_ << fields[i];
        }
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

}  // namespace grreal

#pragma once

// Row-oriented CSV artifacts: UTF-8, comma-delimited, LF endings, mandatory
// header, doubles at 17 significant digits so values round-trip exactly.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "iron/errors.hpp"

namespace iron {

struct CsvField {
    std::string text;

    CsvField(double v) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        text = buf;
    }
    CsvField(int v) : text(std::to_string(v)) {}
    CsvField(long v) : text(std::to_string(v)) {}
    CsvField(std::uint64_t v) : text(std::to_string(v)) {}
    CsvField(const char* s) : text(s) {}
    CsvField(std::string s) : text(std::move(s)) {}
};

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
        : out_(path, std::ios::binary), n_cols_(header.size()) {
        if (!out_) throw ConfigError("cannot open output file: " + path.string());
        if (header.empty()) throw InvalidInput("CsvWriter: header must name columns");
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (i > 0) out_ << ',';
            out_ << header[i];
        }
        out_ << '\n';
    }

    void row(const std::vector<CsvField>& fields) {
        if (fields.size() != n_cols_)
            throw InvalidInput("CsvWriter: row width does not match header");
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i > 0) out_ << ',';
            out_ << fields[i].text;
        }
        out_ << '\n';
    }

    void flush() { out_.flush(); }

private:
    std::ofstream out_;
    std::size_t n_cols_;
};

} // namespace iron

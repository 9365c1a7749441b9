#pragma once

#include <cstdio>
#include <fstream>
#include <string>

#include "types.hpp"

namespace linkadjust {

struct CsvTable {
    std::vector<std::string> columns;
    Matrix values;  // rows x columns

    Index column(const std::string& name) const {
        for (std::size_t j = 0; j < columns.size(); ++j)
            if (columns[j] == name) return static_cast<Index>(j);
        throw io_error("unknown column '" + name + "'");
    }
    bool has_column(const std::string& name) const {
        return std::find(columns.begin(), columns.end(), name) != columns.end();
    }
};

namespace detail {

//! Split CSV text into records of fields, honoring RFC 4180 quoting
//! (embedded commas, doubled quotes, embedded newlines).
inline std::vector<std::vector<std::string>> split_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> fields;
    std::string cur;
    bool in_quotes = false;
    auto end_field = [&] { fields.push_back(std::move(cur)); cur.clear(); };
    auto end_record = [&] {
        end_field();
        if (!(fields.size() == 1 && fields[0].empty())) records.push_back(std::move(fields));
        fields.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (in_quotes) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') { cur.push_back('"'); ++i; }
                else in_quotes = false;
            } else cur.push_back(c);
        } else if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            if (!cur.empty() && cur.back() == '\r') cur.pop_back();
            end_record();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty() && cur.back() == '\r') cur.pop_back();
    if (!cur.empty() || !fields.empty()) end_record();
    return records;
}

} // namespace detail

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "'");
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto records = detail::split_csv(text);
    if (records.empty()) throw io_error("'" + path + "' is empty");
    CsvTable t;
    t.columns = records[0];
    const std::size_t ncol = t.columns.size();
    const std::size_t nrow = records.size() - 1;
    if (nrow == 0) throw io_error("'" + path + "' has a header but no data rows");
    t.values.resize(static_cast<Index>(nrow), static_cast<Index>(ncol));
    for (std::size_t r = 0; r < nrow; ++r) {
        const auto& rec = records[r + 1];
        if (rec.size() != ncol)
            throw io_error("row " + std::to_string(r + 1) + " has " + std::to_string(rec.size()) +
                           " fields, expected " + std::to_string(ncol));
        for (std::size_t c = 0; c < ncol; ++c) {
            const std::string& f = rec[c];
            if (f.empty())
                throw io_error("missing value at row " + std::to_string(r + 1) + ", column '" +
                               t.columns[c] + "'");
            char* endp = nullptr;
            const double v = std::strtod(f.c_str(), &endp);
            if (endp == f.c_str() || *endp != '\0')
                throw io_error("non-numeric value '" + f + "' at row " + std::to_string(r + 1) +
                               ", column '" + t.columns[c] + "'");
            t.values(static_cast<Index>(r), static_cast<Index>(c)) = v;
        }
    }
    return t;
}

inline std::string format_numeric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const Matrix& values) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write '" + path + "'");
    for (std::size_t j = 0; j < header.size(); ++j)
        out << (j ? "," : "") << header[j];
    out << "\n";
    for (Index r = 0; r < values.rows(); ++r) {
        for (Index c = 0; c < values.cols(); ++c)
            out << (c ? "," : "") << format_numeric(values(r, c));
        out << "\n";
    }
    if (!out) throw io_error("short write to '" + path + "'");
}

struct ColumnRoles {
    std::string response;
    std::vector<std::string> covariates;    // outcome model, intercept injected
    std::vector<std::string> m_covariates;  // mismatch model, intercept injected
    std::optional<std::string> block;
};

//! Assemble a dataset from named CSV columns; intercept columns are always
//! injected, never read from the file.
inline LinkedDataset build_dataset(const CsvTable& t, const ColumnRoles& roles) {
    LinkedDataset data;
    const Index n = t.values.rows();
    data.y = t.values.col(t.column(roles.response));
    data.X.resize(n, static_cast<Index>(roles.covariates.size()) + 1);
    data.X.col(0).setOnes();
    for (std::size_t j = 0; j < roles.covariates.size(); ++j)
        data.X.col(static_cast<Index>(j) + 1) = t.values.col(t.column(roles.covariates[j]));
    data.Z.resize(n, static_cast<Index>(roles.m_covariates.size()) + 1);
    data.Z.col(0).setOnes();
    for (std::size_t j = 0; j < roles.m_covariates.size(); ++j)
        data.Z.col(static_cast<Index>(j) + 1) = t.values.col(t.column(roles.m_covariates[j]));
    if (roles.block) {
        const Vector b = t.values.col(t.column(*roles.block));
        IntVector bi(n);
        for (Index i = 0; i < n; ++i) bi[i] = static_cast<int>(std::lround(b[i]));
        data.block_id = bi;
    }
    if (t.has_column("true_m")) {
        const Vector m = t.values.col(t.column("true_m"));
        IntVector mi(n);
        for (Index i = 0; i < n; ++i) mi[i] = m[i] != 0.0 ? 1 : 0;
        data.true_m = mi;
    }
    if (n <= data.p())
        throw invalid_input("need more rows than outcome-model columns (n=" +
                            std::to_string(n) + ", p=" + std::to_string(data.p()) + ")");
    data.validate();
    return data;
}

} // namespace linkadjust

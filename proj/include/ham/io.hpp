#pragma once

#include "ham/model.hpp"

#include <json.hpp>

#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace ham::io {

using Json = nlohmann::json;

namespace detail {

inline Vector to_vector(const Json& j, const std::string& what, long expected) {
    if (!j.is_array()) throw InputError(what + " must be a list");
    if (expected >= 0 && static_cast<long>(j.size()) != expected) {
        std::ostringstream os;
        os << what << " has length " << j.size() << ", expected " << expected;
        throw InputError(os.str());
    }
    Vector v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) throw InputError(what + " must contain numbers");
        v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
    }
    return v;
}

inline Matrix to_matrix(const Json& j, const std::string& what, long rows, long cols) {
    if (!j.is_array() || static_cast<long>(j.size()) != rows) {
        std::ostringstream os;
        os << what << " must have " << rows << " rows";
        throw InputError(os.str());
    }
    Matrix m(rows, cols);
    for (long r = 0; r < rows; ++r) {
        const Vector row = to_vector(j[static_cast<std::size_t>(r)], what + " row", cols);
        m.row(r) = row.transpose();
    }
    return m;
}

template <typename T>
T required(const Json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key)) throw InputError(ctx + ": missing field '" + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception&) {
        throw InputError(ctx + ": field '" + key + "' has the wrong type");
    }
}

inline Json matrix_json(const Matrix& m) {
    Json rows = Json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline Json vector_json(const Vector& v) {
    Json out = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

}  // namespace detail

inline StudySummary parse_study(const Json& js, std::size_t index) {
    std::string ctx = "studies[" + std::to_string(index) + "]";
    if (!js.is_object()) throw InputError(ctx + " must be an object");
    StudySummary s;
    s.study_id = detail::required<std::string>(js, "id", ctx);
    ctx = "study '" + s.study_id + "'";
    s.p = detail::required<int>(js, "p", ctx);
    s.q = detail::required<int>(js, "q", ctx);
    s.n = detail::required<long>(js, "n", ctx);
    s.sigma2 = detail::required<double>(js, "sigma2", ctx);
    if (s.p < 1 || s.q < s.p) throw InputError(ctx + ": need 1 <= p <= q");
    if (!js.contains("beta_tilde")) throw InputError(ctx + ": missing field 'beta_tilde'");
    s.beta_tilde = detail::to_vector(js["beta_tilde"], ctx + " beta_tilde", s.p);

    const int sources = static_cast<int>(js.contains("gram_proj")) + static_cast<int>(js.contains("gram_blocks")) +
                        static_cast<int>(js.contains("cov_full"));
    if (sources != 1) throw InputError(ctx + ": exactly one of gram_proj, gram_blocks, cov_full is required");

    if (js.contains("gram_proj")) {
        s.gram_proj = detail::to_matrix(js["gram_proj"], ctx + " gram_proj", s.p, s.p);
    } else if (js.contains("gram_blocks")) {
        const Json& b = js["gram_blocks"];
        const int extra = s.q - s.p;
        if (!b.is_object() || !b.contains("xx")) throw InputError(ctx + ": gram_blocks needs xx");
        const Matrix xx = detail::to_matrix(b["xx"], ctx + " gram_blocks.xx", s.p, s.p);
        if (extra == 0) {
            s.gram_proj = xx;
        } else {
            if (!b.contains("xz") || !b.contains("zz")) throw InputError(ctx + ": gram_blocks needs xz and zz");
            const Matrix xz = detail::to_matrix(b["xz"], ctx + " gram_blocks.xz", s.p, extra);
            const Matrix zz = detail::to_matrix(b["zz"], ctx + " gram_blocks.zz", extra, extra);
            if (!linalg::is_positive_definite(linalg::symmetrize(zz)))
                throw InputError(ctx + ": gram_blocks.zz is not positive definite");
            s.gram_proj = gram_from_blocks(xx, xz, zz);
        }
    } else {
        const Matrix cov = detail::to_matrix(js["cov_full"], ctx + " cov_full", s.q, s.q);
        try {
            s.gram_proj = precision_from_covariance(cov, s.sigma2, s.p);
        } catch (const InputError& e) {
            throw InputError(ctx + ": " + e.what());
        }
    }
    if (js.contains("covariate_sds")) s.covariate_sds = detail::to_vector(js["covariate_sds"], ctx + " covariate_sds", s.p);
    if (js.contains("intercept_index")) s.intercept_index = detail::required<int>(js, "intercept_index", ctx);
    if (js.contains("rss")) s.rss = detail::required<double>(js, "rss", ctx);
    return s;
}

inline StudySummary csv_study_entry(const Json& js, std::size_t index, const std::string& base_dir);

/// Parsed input plus optional covariate labels.
struct InputDocument {
    MetaProblem problem;
    std::vector<std::string> covariates;
};

/// Parse and validate the structured input document. Relative CSV paths in
/// raw-data entries resolve against `base_dir`.
inline InputDocument load_document(std::istream& in, const std::string& base_dir = ".") {
    Json doc;
    try {
        in >> doc;
    } catch (const Json::exception& e) {
        throw InputError(std::string("input is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("studies") || !doc["studies"].is_array())
        throw InputError("input must be an object with a 'studies' list");
    std::vector<StudySummary> studies;
    for (std::size_t i = 0; i < doc["studies"].size(); ++i) {
        const Json& js = doc["studies"][i];
        studies.push_back(js.is_object() && js.contains("csv") ? csv_study_entry(js, i, base_dir)
                                                               : parse_study(js, i));
    }
    InputDocument out{MetaProblem(std::move(studies)), {}};
    if (doc.contains("covariates")) {
        try {
            out.covariates = doc["covariates"].get<std::vector<std::string>>();
        } catch (const Json::exception&) {
            throw InputError("'covariates' must be a list of strings");
        }
        if (static_cast<int>(out.covariates.size()) != out.problem.p())
            throw InputError("'covariates' length differs from p");
    }
    return out;
}

inline MetaProblem load_meta_problem(std::istream& in) { return load_document(in).problem; }

inline InputDocument load_document_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open input file '" + path + "'");
    const auto slash = path.find_last_of('/');
    return load_document(in, slash == std::string::npos ? "." : path.substr(0, slash));
}

inline MetaProblem load_meta_problem_file(const std::string& path) { return load_document_file(path).problem; }

inline Json to_json(const MetaProblem& problem, const std::vector<std::string>& covariates = {}) {
    Json studies = Json::array();
    for (const auto& s : problem.studies()) {
        Json js;
        js["id"] = s.study_id;
        js["p"] = s.p;
        js["q"] = s.q;
        js["n"] = s.n;
        js["sigma2"] = s.sigma2;
        js["beta_tilde"] = detail::vector_json(s.beta_tilde);
        js["gram_proj"] = detail::matrix_json(s.gram_proj);
        if (s.covariate_sds) js["covariate_sds"] = detail::vector_json(*s.covariate_sds);
        if (s.intercept_index) js["intercept_index"] = *s.intercept_index;
        if (s.rss) js["rss"] = *s.rss;
        studies.push_back(std::move(js));
    }
    Json doc;
    if (!covariates.empty()) doc["covariates"] = covariates;
    doc["studies"] = std::move(studies);
    return doc;
}

// ---------------------------------------------------------------------------
// CSV raw-data path
// ---------------------------------------------------------------------------

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw InputError("column '" + name + "' not found");
    }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline CsvTable read_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    if (!std::getline(in, line)) throw InputError("empty CSV");
    t.header = split_csv_line(line);
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != t.header.size()) throw InputError("CSV row has wrong number of fields");
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(c, &used));
                if (used != c.size()) throw std::invalid_argument(c);
            } catch (const std::exception&) {
                throw InputError("CSV cell '" + c + "' is not numeric");
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

/// One study from raw CSV data. A shared column named "(intercept)" that is
/// absent from the file is synthesized as a column of ones.
inline StudySummary summarize_csv_study(std::istream& in, const std::string& study_id, const std::string& outcome,
                                        const std::vector<std::string>& shared,
                                        const std::vector<std::string>& nuisance,
                                        SigmaConvention convention = SigmaConvention::Mle) {
    const CsvTable t = read_csv(in);
    const auto n = static_cast<Eigen::Index>(t.rows.size());
    auto extract = [&](const std::vector<std::string>& names, std::optional<int>* intercept) {
        Matrix m(n, static_cast<Eigen::Index>(names.size()));
        for (std::size_t c = 0; c < names.size(); ++c) {
            if (names[c] == "(intercept)") {
                m.col(static_cast<Eigen::Index>(c)).setOnes();
                if (intercept) *intercept = static_cast<int>(c);
                continue;
            }
            const int idx = t.column(names[c]);
            for (Eigen::Index r = 0; r < n; ++r)
                m(r, static_cast<Eigen::Index>(c)) = t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(idx)];
        }
        return m;
    };
    std::optional<int> intercept;
    const Matrix x = extract(shared, &intercept);
    std::optional<Matrix> z;
    if (!nuisance.empty()) z = extract(nuisance, nullptr);
    const int yi = t.column(outcome);
    Vector y(n);
    for (Eigen::Index r = 0; r < n; ++r) y(r) = t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(yi)];
    return summarize_raw_study(x, z, y, study_id, convention, intercept);
}

/// Raw-data study entry: {"id", "csv", "outcome", "shared": [...], "nuisance": [...],
/// optional "sigma_convention": "mle" | "unbiased"}.
inline StudySummary csv_study_entry(const Json& js, std::size_t index, const std::string& base_dir) {
    const std::string ctx = "studies[" + std::to_string(index) + "]";
    const auto id = detail::required<std::string>(js, "id", ctx);
    auto path = detail::required<std::string>(js, "csv", ctx);
    if (!path.empty() && path.front() != '/') path = base_dir + "/" + path;
    const auto outcome = detail::required<std::string>(js, "outcome", ctx);
    const auto shared = detail::required<std::vector<std::string>>(js, "shared", ctx);
    std::vector<std::string> nuisance;
    if (js.contains("nuisance")) nuisance = detail::required<std::vector<std::string>>(js, "nuisance", ctx);
    SigmaConvention conv = SigmaConvention::Mle;
    if (js.contains("sigma_convention")) {
        const auto c = detail::required<std::string>(js, "sigma_convention", ctx);
        if (c == "unbiased") conv = SigmaConvention::Unbiased;
        else if (c != "mle") throw InputError(ctx + ": sigma_convention must be 'mle' or 'unbiased'");
    }
    std::ifstream in(path);
    if (!in) throw InputError("study '" + id + "': cannot open '" + path + "'");
    try {
        return summarize_csv_study(in, id, outcome, shared, nuisance, conv);
    } catch (const InputError& e) {
        const std::string what = e.what();
        if (what.rfind("study '", 0) == 0) throw;
        throw InputError("study '" + id + "': " + what);
    }
}

}  // namespace ham::io

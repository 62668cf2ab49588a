#include "rmab/results.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "rmab/errors.hpp"

namespace rmab {

namespace {

constexpr const char* kHeader = "loss,dataset,seed,split,normalized_joint_dq,"
                                "normalized_decomposed_dq,seconds_per_epoch,manifest_hash,version";

using GroupKey = std::pair<std::string, std::string>;

std::map<GroupKey, std::vector<const ResultRow*>> group(const ResultsTable& table) {
    std::map<GroupKey, std::vector<const ResultRow*>> out;
    for (const ResultRow& r : table.rows)
        out[{r.loss, r.dataset}].push_back(&r);
    return out;
}

// Distinct values joined with ';' in first-seen order.
template <typename Get>
std::string joined(const std::vector<const ResultRow*>& rows, Get get) {
    std::vector<std::string> seen;
    for (const ResultRow* r : rows) {
        std::string v = get(*r);
        if (std::find(seen.begin(), seen.end(), v) == seen.end())
            seen.push_back(std::move(v));
    }
    std::string out;
    for (const std::string& v : seen)
        out += (out.empty() ? "" : ";") + v;
    return out;
}

std::string provenance(const std::vector<const ResultRow*>& rows) {
    return fmt::format(
        "{},{},{}", joined(rows, [](const ResultRow& r) { return std::to_string(r.seed); }),
        joined(rows, [](const ResultRow& r) { return r.manifest_hash; }),
        joined(rows, [](const ResultRow& r) { return r.version; }));
}

double parse_real(const std::string& s, int line) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size())
            throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw InputError(fmt::format("results line {}: '{}' is not a number", line, s));
    }
}

} // namespace

const char* toolkit_version() { return RMABDFL_VERSION; }

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ','))
        out.push_back(field);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

std::string ResultsTable::to_csv() const {
    std::string out = kHeader;
    out += '\n';
    for (const ResultRow& r : rows)
        out += fmt::format("{},{},{},{},{:.17g},{:.17g},{:.17g},{},{}\n", r.loss, r.dataset,
                           r.seed, r.split, r.normalized_joint_dq, r.normalized_decomposed_dq,
                           r.seconds_per_epoch, r.manifest_hash, r.version);
    return out;
}

ResultsTable ResultsTable::from_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != kHeader)
        throw InputError("results file does not start with the expected header");
    ResultsTable table;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty())
            continue;
        const auto f = split_csv_line(line);
        if (f.size() != 9)
            throw InputError(fmt::format("results line {} has {} fields, expected 9", lineno,
                                         f.size()));
        ResultRow r;
        r.loss = f[0];
        r.dataset = f[1];
        try {
            r.seed = std::stoull(f[2]);
        } catch (const std::exception&) {
            throw InputError(fmt::format("results line {}: bad seed '{}'", lineno, f[2]));
        }
        r.split = f[3];
        r.normalized_joint_dq = parse_real(f[4], lineno);
        r.normalized_decomposed_dq = parse_real(f[5], lineno);
        r.seconds_per_epoch = parse_real(f[6], lineno);
        r.manifest_hash = f[7];
        r.version = f[8];
        table.rows.push_back(std::move(r));
    }
    return table;
}

MeanSem mean_sem(const std::vector<double>& values) {
    MeanSem m;
    m.n = static_cast<int>(values.size());
    if (m.n == 0)
        return m;
    for (double v : values)
        m.mean += v;
    m.mean /= m.n;
    if (m.n > 1) {
        double ss = 0.0;
        for (double v : values)
            ss += (v - m.mean) * (v - m.mean);
        m.sem = std::sqrt(ss / (m.n - 1) / m.n);
    }
    return m;
}

std::string dq_table_csv(const ResultsTable& table) {
    std::string out = "loss,dataset,n,normalized_joint_test_dq_mean,normalized_joint_test_dq_sem,"
                      "normalized_decomposed_test_dq_mean,normalized_decomposed_test_dq_sem,"
                      "seeds,manifest_hash,version\n";
    for (const auto& [key, rows] : group(table)) {
        std::vector<double> joint, dec;
        std::vector<const ResultRow*> used;
        for (const ResultRow* r : rows)
            if (r->split == "test") {
                joint.push_back(r->normalized_joint_dq);
                dec.push_back(r->normalized_decomposed_dq);
                used.push_back(r);
            }
        if (joint.empty())
            continue;
        const MeanSem j = mean_sem(joint), d = mean_sem(dec);
        out += fmt::format("{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{}\n", key.first, key.second, j.n,
                           j.mean, j.sem, d.mean, d.sem, provenance(used));
    }
    return out;
}

std::string time_table_csv(const ResultsTable& table) {
    std::string out = "loss,dataset,n,seconds_per_epoch_mean,seconds_per_epoch_sem,seeds,"
                      "manifest_hash,version\n";
    for (const auto& [key, rows] : group(table)) {
        std::vector<double> secs;
        std::vector<const ResultRow*> used;
        for (const ResultRow* r : rows)
            if (r->split == "test") {
                secs.push_back(r->seconds_per_epoch);
                used.push_back(r);
            }
        if (secs.empty())
            continue;
        const MeanSem s = mean_sem(secs);
        out += fmt::format("{},{},{},{:.6f},{:.6f},{}\n", key.first, key.second, s.n, s.mean,
                           s.sem, provenance(used));
    }
    return out;
}

} // namespace rmab

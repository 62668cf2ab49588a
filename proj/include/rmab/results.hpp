#pragma once

// Result rows, their CSV form, and mean +- standard-error aggregation.

#include <cstdint>
#include <string>
#include <vector>

namespace rmab {

const char* toolkit_version();

struct ResultRow {
    std::string loss;
    std::string dataset;
    std::uint64_t seed = 0;
    std::string split;
    double normalized_joint_dq = 0.0;
    double normalized_decomposed_dq = 0.0;
    double seconds_per_epoch = 0.0;
    std::string manifest_hash;
    std::string version;
};

struct ResultsTable {
    std::vector<ResultRow> rows;

    std::string to_csv() const;
    static ResultsTable from_csv(const std::string& text);
};

struct MeanSem {
    double mean = 0.0;
    double sem = 0.0; // sample standard deviation / sqrt(n); 0 when n < 2
    int n = 0;
};

MeanSem mean_sem(const std::vector<double>& values);

/// One row per (loss, dataset): mean and sem of both normalized DQ metrics.
std::string dq_table_csv(const ResultsTable& table);

/// One row per (loss, dataset): mean and sem of seconds per epoch.
std::string time_table_csv(const ResultsTable& table);

/// Splits one CSV line on commas. Fields never contain commas or quotes.
std::vector<std::string> split_csv_line(const std::string& line);

} // namespace rmab

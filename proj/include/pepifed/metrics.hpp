#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace pepifed::metrics {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct MetricRow {
    std::string method;
    int slot_index = 0;     // ordering key; the label is what gets printed
    std::string slot;
    int round = 0;          // 1-based within the slot
    int epoch = 0;          // 1-based global epoch count after this round
    int client = 0;
    std::string metric;
    double value = 0.0;
};

struct MetricsLog {
    std::vector<MetricRow> rows;

    void add(MetricRow row) { rows.push_back(std::move(row)); }
    void append(const MetricsLog& other) { rows.insert(rows.end(), other.rows.begin(), other.rows.end()); }

    // last row matching the filters (empty strings/negatives act as wildcards)
    const MetricRow* find_last(const std::string& method, const std::string& slot, int client,
                               const std::string& metric) const;
};

// Header exactly `method,slot,round,epoch,client,metric,value`; rows sorted
// by (method, slot, round, epoch, client, metric); values with 6 decimals.
void write_csv(const MetricsLog& log, const std::string& path);

// Parser for tests; slot ordering indices are reconstructed per method from
// first appearance.
MetricsLog read_csv(const std::string& path);

// Minimal line chart of mean test_accuracy per method over epochs.
void write_accuracy_svg(const MetricsLog& log, const std::string& path);

}  // namespace pepifed::metrics

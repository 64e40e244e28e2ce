#include "pepifed/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <tuple>

namespace pepifed::metrics {

const MetricRow* MetricsLog::find_last(const std::string& method, const std::string& slot, int client,
                                       const std::string& metric) const {
    for (auto it = rows.rbegin(); it != rows.rend(); ++it) {
        if (!method.empty() && it->method != method) continue;
        if (!slot.empty() && it->slot != slot) continue;
        if (client >= 0 && it->client != client) continue;
        if (!metric.empty() && it->metric != metric) continue;
        return &*it;
    }
    return nullptr;
}

namespace {

auto sort_key(const MetricRow& r) {
    return std::tie(r.method, r.slot_index, r.slot, r.round, r.epoch, r.client, r.metric);
}

std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

void write_csv(const MetricsLog& log, const std::string& path) {
    std::vector<MetricRow> rows = log.rows;
    std::stable_sort(rows.begin(), rows.end(), [](const MetricRow& a, const MetricRow& b) {
        return sort_key(a) < sort_key(b);
    });

    std::ofstream out(path, std::ios::binary);  // binary: one byte format on every platform
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "method,slot,round,epoch,client,metric,value\n";
    for (const auto& r : rows) {
        out << r.method << ',' << r.slot << ',' << r.round << ',' << r.epoch << ',' << r.client << ',' << r.metric
            << ',' << format_value(r.value) << '\n';
    }
    if (!out.flush()) throw IoError("write failed: " + path);
}

MetricsLog read_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty metrics file: " + path);
    if (line != "method,slot,round,epoch,client,metric,value") throw IoError("unexpected metrics header: " + line);

    MetricsLog log;
    std::map<std::pair<std::string, std::string>, int> slot_order;
    std::map<std::string, int> slots_seen;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        MetricRow r;
        auto next = [&](const char* what) {
            if (!std::getline(ss, field, ',')) throw IoError(std::string("missing field ") + what + ": " + line);
            return field;
        };
        r.method = next("method");
        r.slot = next("slot");
        r.round = std::stoi(next("round"));
        r.epoch = std::stoi(next("epoch"));
        r.client = std::stoi(next("client"));
        r.metric = next("metric");
        r.value = std::stod(next("value"));
        auto key = std::make_pair(r.method, r.slot);
        auto it = slot_order.find(key);
        if (it == slot_order.end()) it = slot_order.emplace(key, slots_seen[r.method]++).first;
        r.slot_index = it->second;
        log.rows.push_back(std::move(r));
    }
    return log;
}

void write_accuracy_svg(const MetricsLog& log, const std::string& path) {
    // mean of test_accuracy across clients per (method, epoch)
    std::map<std::string, std::map<int, std::pair<double, int>>> series;
    for (const auto& r : log.rows) {
        if (r.metric != "test_accuracy") continue;
        auto& cell = series[r.method][r.epoch];
        cell.first += r.value;
        cell.second += 1;
    }

    const double w = 640, h = 400, ml = 50, mr = 20, mt = 20, mb = 40;
    int max_epoch = 1;
    for (const auto& [m, pts] : series)
        for (const auto& [e, _] : pts) max_epoch = std::max(max_epoch, e);

    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" "
                  "viewBox=\"0 0 %.0f %.0f\">\n",
                  w, h, w, h);
    out << buf << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof(buf), "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml,
                  h - mb, w - mr, h - mb);
    out << buf;
    std::snprintf(buf, sizeof(buf), "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"black\"/>\n", ml,
                  mt, ml, h - mb);
    out << buf;

    auto x_of = [&](double e) { return ml + (w - ml - mr) * (max_epoch > 1 ? (e - 1) / (max_epoch - 1) : 0.5); };
    auto y_of = [&](double acc) { return h - mb - (h - mt - mb) * acc; };

    int color = 0;
    double legend_y = mt + 12;
    for (const auto& [method, pts] : series) {
        const char* c = palette[color++ % 6];
        std::string poly;
        for (const auto& [e, cell] : pts) {
            std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x_of(e), y_of(cell.first / cell.second));
            poly += buf;
        }
        out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"" << poly << "\"/>\n";
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" fill=\"%s\" font-family=\"sans-serif\">%s</text>\n",
                      ml + 8.0, legend_y, c, method.c_str());
        out << buf;
        legend_y += 14;
    }
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%.1f\" y=\"%.1f\" font-size=\"12\" font-family=\"sans-serif\">epoch</text>\n",
                  (w - ml - mr) / 2 + ml, h - 10);
    out << buf;
    out << "</svg>\n";
    if (!out.flush()) throw IoError("write failed: " + path);
}

}  // namespace pepifed::metrics

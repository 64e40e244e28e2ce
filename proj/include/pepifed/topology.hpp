#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pepifed::topo {

struct AdjacencyMatrix {
    int n = 0;
    std::vector<std::uint8_t> entries;  // n*n row-major, binary

    AdjacencyMatrix() = default;
    explicit AdjacencyMatrix(int n_) : n(n_), entries(static_cast<size_t>(n_) * n_, 0) {}

    std::uint8_t at(int i, int j) const { return entries[static_cast<size_t>(i) * n + j]; }
    void set(int i, int j, std::uint8_t v) { entries[static_cast<size_t>(i) * n + j] = v; }
};

// One time slot: a contiguous span of federation rounds under one adjacency.
// rounds == 0 means "not set yet"; resolve_rounds fills it in from a total.
struct Slot {
    std::string label;
    int rounds = 0;
    AdjacencyMatrix adj;
};

struct Schedule {
    int clients = 0;
    std::vector<Slot> slots;

    int total_rounds() const;
    int max_scale() const;  // largest per-client K across all slots
};

// Checks symmetry, binary entries, the inactive-row convention
// (entry(i,i)=0 forces row and column i to zero), matching client counts and
// rounds >= 1. Returns every violation found; empty means valid.
std::vector<std::string> validate_schedule(const Schedule& schedule);

struct ClientView {
    bool active = false;
    std::vector<int> neighbors;  // ascending, excludes the client itself
    int scale_k = 0;             // 1 + |neighbors| when active, 0 when inactive
};

ClientView query(const Schedule& schedule, int client, int slot);

// Distributes `total` rounds over slots whose rounds are unset (earlier slots
// take the remainder); slots with explicit rounds keep them.
void resolve_rounds(Schedule& schedule, int total);

// JSON file: {"clients": n, "slots": [{"label": str, "rounds": int?, "adjacency": [[0/1,..],..]}]}
Schedule load_schedule(const std::string& path);
Schedule parse_schedule(const std::string& json_text);

}  // namespace pepifed::topo

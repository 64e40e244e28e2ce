#include "pepifed/topology.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "pepifed/data.hpp"

namespace pepifed::topo {

int Schedule::total_rounds() const {
    int total = 0;
    for (const auto& s : slots) total += s.rounds;
    return total;
}

int Schedule::max_scale() const {
    int best = 1;
    for (size_t s = 0; s < slots.size(); ++s)
        for (int c = 0; c < clients; ++c) {
            auto v = query(*this, c, static_cast<int>(s));
            if (v.scale_k > best) best = v.scale_k;
        }
    return best;
}

std::vector<std::string> validate_schedule(const Schedule& schedule) {
    std::vector<std::string> errs;
    auto err = [&](std::string msg) { errs.push_back(std::move(msg)); };

    if (schedule.clients < 1) err("schedule: clients must be >= 1");
    if (schedule.slots.empty()) err("schedule: at least one slot required");

    for (size_t s = 0; s < schedule.slots.size(); ++s) {
        const Slot& slot = schedule.slots[s];
        std::string where = "slot " + (slot.label.empty() ? std::to_string(s) : slot.label);
        if (slot.rounds < 1) err(where + ": rounds must be >= 1");
        const AdjacencyMatrix& a = slot.adj;
        if (a.n != schedule.clients) {
            err(where + ": adjacency is " + std::to_string(a.n) + "x" + std::to_string(a.n) + " but schedule has " +
                std::to_string(schedule.clients) + " clients");
            continue;  // indexing below assumes matching n
        }
        for (int i = 0; i < a.n; ++i)
            for (int j = 0; j < a.n; ++j) {
                if (a.at(i, j) > 1)
                    err(where + ": entry (" + std::to_string(i) + "," + std::to_string(j) + ") is not binary");
                if (j > i && a.at(i, j) != a.at(j, i))
                    err(where + ": not symmetric at (" + std::to_string(i) + "," + std::to_string(j) + ")");
            }
        for (int i = 0; i < a.n; ++i) {
            if (a.at(i, i) != 0) continue;
            for (int j = 0; j < a.n; ++j)
                if (a.at(i, j) != 0 || a.at(j, i) != 0) {
                    err(where + ": client " + std::to_string(i) + " is inactive but has links");
                    break;
                }
        }
    }
    return errs;
}

ClientView query(const Schedule& schedule, int client, int slot) {
    if (slot < 0 || slot >= static_cast<int>(schedule.slots.size()))
        throw std::invalid_argument("query: slot index out of range");
    const AdjacencyMatrix& a = schedule.slots[static_cast<size_t>(slot)].adj;
    if (client < 0 || client >= a.n) throw std::invalid_argument("query: client index out of range");

    ClientView v;
    v.active = a.at(client, client) == 1;
    if (!v.active) return v;
    for (int j = 0; j < a.n; ++j)
        if (j != client && a.at(client, j) == 1) v.neighbors.push_back(j);
    v.scale_k = 1 + static_cast<int>(v.neighbors.size());
    return v;
}

void resolve_rounds(Schedule& schedule, int total) {
    std::vector<Slot*> open;
    int fixed = 0;
    for (auto& s : schedule.slots) {
        if (s.rounds > 0)
            fixed += s.rounds;
        else
            open.push_back(&s);
    }
    if (open.empty()) return;
    int remaining = total - fixed;
    if (remaining < static_cast<int>(open.size()))
        throw std::invalid_argument("resolve_rounds: not enough rounds for every slot to get at least one");
    const int base = remaining / static_cast<int>(open.size());
    const int rem = remaining % static_cast<int>(open.size());
    for (size_t i = 0; i < open.size(); ++i) open[i]->rounds = base + (static_cast<int>(i) < rem ? 1 : 0);
}

Schedule parse_schedule(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw data::FormatError(std::string("schedule: malformed JSON: ") + e.what());
    }
    try {
        Schedule sched;
        sched.clients = j.at("clients").get<int>();
        for (const auto& js : j.at("slots")) {
            Slot slot;
            slot.label = js.value("label", "slot" + std::to_string(sched.slots.size()));
            slot.rounds = js.value("rounds", 0);
            const auto& rows = js.at("adjacency");
            slot.adj = AdjacencyMatrix(static_cast<int>(rows.size()));
            for (int i = 0; i < slot.adj.n; ++i) {
                const auto& row = rows.at(i);
                if (static_cast<int>(row.size()) != slot.adj.n)
                    throw data::FormatError("schedule: adjacency row " + std::to_string(i) + " has wrong length");
                for (int c = 0; c < slot.adj.n; ++c)
                    slot.adj.set(i, c, static_cast<std::uint8_t>(row.at(c).get<int>()));
            }
            sched.slots.push_back(std::move(slot));
        }
        return sched;
    } catch (const nlohmann::json::exception& e) {
        throw data::FormatError(std::string("schedule: ") + e.what());
    }
}

Schedule load_schedule(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data::FormatError("schedule: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_schedule(ss.str());
}

}  // namespace pepifed::topo

#pragma once

#include <string>
#include <vector>

#include "actloop/microworld.hpp"
#include "actloop/planner.hpp"

namespace actloop {

struct MemoryEntry {
    PlanStep step;
    Segment segment;
    double reward = 0.0;
};

// Append-only record of accepted transitions plus the simulated state after the last one.
struct WorldMemory {
    std::vector<MemoryEntry> transitions;
    SymbolicState state;
    // Belief corrections applied from critic diagnoses, in order.
    std::vector<std::string> corrections;

    bool empty() const { return transitions.empty(); }
    std::size_t size() const { return transitions.size(); }
};

inline WorldMemory make_memory(const SymbolicState& initial) {
    WorldMemory m;
    m.state = initial;
    return m;
}

}  // namespace actloop

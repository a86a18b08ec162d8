#pragma once

#include <string>
#include <vector>

#include "rotlab/perception.hpp"

namespace rotlab {

// Declarative filter scenario:
//
//   states = doorway, couch, table, window
//   actions = stay, left, right
//   observations = dark, dim_blob, bright
//   init = 0.25, 0.25, 0.25, 0.25
//   mu stay = 1,0,0,0 ; 0,1,0,0 ; 0,0,1,0 ; 0,0,0,1
//   o doorway = 0.6, 0.3, 0.1
//   steps = right:dark, right:dim_blob
//
// One 'mu <action>' line per action (rows separated by ';', one per source
// state), one 'o <state>' line per state, and an optional step sequence.
struct Scenario {
    StateSpace states;
    std::vector<std::string> actions;
    std::vector<std::string> observations;
    Belief init;
    TransitionModel mu{1, 1};
    ObservationModel obs{1, 1};
    std::vector<std::pair<int, int>> steps;  // (action index, observation index)

    int action_index(const std::string& name) const;
    int observation_index(const std::string& name) const;
};

Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const std::string& text);

struct FilterTraceRow {
    int step;  // 0 is the initial belief; actions apply from step 1
    std::string action;
    std::string observation;
    std::vector<double> mass;
};

std::vector<FilterTraceRow> run_filter(const Scenario& sc, bool map_approx = false);
void write_filter_trace_csv(const std::string& path, const Scenario& sc,
                            const std::vector<FilterTraceRow>& rows);

}  // namespace rotlab

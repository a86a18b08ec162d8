#include "rotlab/scenario.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "rotlab/config.hpp"

namespace rotlab {

int Scenario::action_index(const std::string& name) const {
    for (std::size_t i = 0; i < actions.size(); ++i) {
        if (actions[i] == name) return static_cast<int>(i);
    }
    throw Error("unknown action '" + name + "'");
}

int Scenario::observation_index(const std::string& name) const {
    for (std::size_t i = 0; i < observations.size(); ++i) {
        if (observations[i] == name) return static_cast<int>(i);
    }
    throw Error("unknown observation '" + name + "'");
}

namespace {

std::vector<double> parse_prob_row(const std::string& s, const std::string& what, int expect) {
    std::vector<double> row;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            row.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw ConfigError(what + ": '" + item + "' is not a number");
        }
    }
    if (static_cast<int>(row.size()) != expect) {
        throw ConfigError(what + ": expected " + std::to_string(expect) + " entries, got " +
                          std::to_string(row.size()));
    }
    return row;
}

}  // namespace

Scenario parse_scenario(const std::string& text) {
    const KvConfig kv = KvConfig::parse_text(text);
    Scenario sc;
    sc.states.names = kv.get_string_list("states");
    sc.actions = kv.get_string_list("actions");
    sc.observations = kv.get_string_list("observations");
    const int Z = sc.states.count();
    const int A = static_cast<int>(sc.actions.size());
    const int X = static_cast<int>(sc.observations.size());
    if (Z == 0 || A == 0 || X == 0) {
        throw ConfigError("scenario needs non-empty states, actions, observations");
    }

    sc.init.p = parse_prob_row(kv.get_string("init"), "init", Z);
    sc.init.validate();

    sc.mu = TransitionModel(A, Z);
    for (int a = 0; a < A; ++a) {
        const std::string key = "mu " + sc.actions[static_cast<std::size_t>(a)];
        const std::string rows = kv.get_string(key);
        std::stringstream ss(rows);
        std::string row;
        int z = 0;
        while (std::getline(ss, row, ';')) {
            if (z >= Z) throw ConfigError(key + ": too many rows");
            sc.mu.set_row(a, z, parse_prob_row(row, key, Z));
            ++z;
        }
        if (z != Z) throw ConfigError(key + ": expected " + std::to_string(Z) + " rows");
    }
    sc.mu.validate();

    sc.obs = ObservationModel(Z, X);
    for (int z = 0; z < Z; ++z) {
        const std::string key = "o " + sc.states.names[static_cast<std::size_t>(z)];
        sc.obs.set_row(z, parse_prob_row(kv.get_string(key), key, X));
    }
    sc.obs.validate();

    if (kv.has("steps")) {
        for (const std::string& step : kv.get_string_list("steps")) {
            const std::size_t colon = step.find(':');
            if (colon == std::string::npos) {
                throw ConfigError("steps: expected 'action:observation', got '" + step + "'");
            }
            sc.steps.emplace_back(sc.action_index(step.substr(0, colon)),
                                  sc.observation_index(step.substr(colon + 1)));
        }
    }
    return sc;
}

Scenario load_scenario(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open scenario file " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_scenario(ss.str());
}

std::vector<FilterTraceRow> run_filter(const Scenario& sc, bool map_approx) {
    std::vector<FilterTraceRow> rows;
    Belief b = sc.init;
    rows.push_back({0, "", "", b.p});
    int step = 1;
    for (const auto& [a, x] : sc.steps) {
        b = map_approx ? belief_update_map_approx(b, a, x, sc.mu, sc.obs)
                       : belief_update(b, a, x, sc.mu, sc.obs);
        rows.push_back({step, sc.actions[static_cast<std::size_t>(a)],
                        sc.observations[static_cast<std::size_t>(x)], b.p});
        ++step;
    }
    return rows;
}

void write_filter_trace_csv(const std::string& path, const Scenario& sc,
                            const std::vector<FilterTraceRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error("cannot write " + path);
    os << "step,action,observation";
    for (const std::string& s : sc.states.names) os << "," << s;
    os << "\n";
    char buf[64];
    for (const FilterTraceRow& r : rows) {
        os << r.step << "," << r.action << "," << r.observation;
        for (double m : r.mass) {
            std::snprintf(buf, sizeof buf, ",%.17g", m);
            os << buf;
        }
        os << "\n";
    }
}

}  // namespace rotlab

#pragma once

#include <fstream>

#include <json.hpp>

#include "generators.hpp"

namespace macp {

using json = nlohmann::json;

// Model files use string ids throughout. Table rows may use "*" for a state
// or for one agent's action; later rows override earlier ones, so a wildcard
// default can be followed by specific entries. Serialization writes every
// (state, joint action) row explicitly.

namespace detail {

inline int find_id(const std::vector<std::string>& ids, const std::string& id, const std::string& what) {
    for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) return static_cast<int>(i);
    throw ValidationError("unknown " + what + " '" + id + "'");
}

inline std::vector<std::string> strings(const json& j, const std::string& what) {
    if (!j.is_array()) throw ValidationError(what + " must be an array of ids");
    std::vector<std::string> out;
    for (const auto& e : j) {
        if (!e.is_string()) throw ValidationError(what + " ids must be strings");
        out.push_back(e.get<std::string>());
    }
    return out;
}

inline std::vector<int> match_states(const ModelSpec& m, const json& j) {
    const auto id = j.get<std::string>();
    if (id == "*") {
        std::vector<int> all(m.num_states());
        std::iota(all.begin(), all.end(), 0);
        return all;
    }
    return {find_id(m.states, id, "state")};
}

inline std::vector<int> match_actions(const ModelSpec& m, const json& j) {
    const auto ids = strings(j, "action");
    if (static_cast<int>(ids.size()) != m.num_agents) throw ValidationError("joint action needs one id per agent");
    std::vector<int> out;
    for (int a = 0; a < m.num_joint_actions(); ++a) {
        const auto av = m.decode_action(a);
        bool ok = true;
        for (int n = 0; n < m.num_agents && ok; ++n)
            ok = ids[n] == "*" || find_id(m.actions[n], ids[n], "action") == av[n];
        if (ok) out.push_back(a);
    }
    return out;
}

inline std::vector<int> parse_obs(const ModelSpec& m, const json& j) {
    const auto ids = strings(j, "observation");
    if (static_cast<int>(ids.size()) != m.num_agents + 1)
        throw ValidationError("joint observation needs a common id and one id per agent");
    std::vector<int> o{find_id(m.common_obs, ids[0], "common observation")};
    for (int n = 0; n < m.num_agents; ++n) o.push_back(find_id(m.private_obs[n], ids[n + 1], "private observation"));
    return o;
}

inline json obs_json(const ModelSpec& m, const std::vector<int>& o) {
    json j = json::array({m.common_obs[o[0]]});
    for (int n = 0; n < m.num_agents; ++n) j.push_back(m.private_obs[n][o[n + 1]]);
    return j;
}

inline json action_json(const ModelSpec& m, int a) {
    json j = json::array();
    const auto av = m.decode_action(a);
    for (int n = 0; n < m.num_agents; ++n) j.push_back(m.actions[n][av[n]]);
    return j;
}

template <class T>
T require(const json& j, const char* key) {
    if (!j.contains(key)) throw ValidationError(std::string("missing field '") + key + "'");
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("field '") + key + "': " + e.what());
    }
}

}  // namespace detail

inline ModelSpec model_from_json(const json& j) {
    using detail::require;
    if (!j.is_object()) throw ValidationError("model file must be a JSON object");
    ModelSpec m;
    m.name = j.value("name", "");
    m.num_agents = require<int>(j, "num_agents");
    if (m.num_agents < 1) throw ValidationError("num_agents must be >= 1");
    m.states = detail::strings(require<json>(j, "states"), "states");
    m.common_obs = detail::strings(require<json>(j, "common_obs"), "common_obs");
    for (const auto& row : require<json>(j, "private_obs")) m.private_obs.push_back(detail::strings(row, "private_obs"));
    for (const auto& row : require<json>(j, "actions")) m.actions.push_back(detail::strings(row, "actions"));
    if (static_cast<int>(m.private_obs.size()) != m.num_agents || static_cast<int>(m.actions.size()) != m.num_agents)
        throw ValidationError("private_obs and actions need one list per agent");
    for (int n = 0; n < m.num_agents; ++n)
        if (m.private_obs[n].empty() || m.actions[n].empty()) throw ValidationError("empty observation or action set");
    if (m.states.empty() || m.common_obs.empty()) throw ValidationError("empty state or common observation set");
    m.kappa = require<Vec>(j, "kappa");
    m.discount = require<double>(j, "discount");
    const int S = m.num_states(), A = m.num_joint_actions();
    m.transition.assign(S, std::vector<std::vector<Outcome>>(A));
    m.cost_c.assign(S, Vec(A, std::numeric_limits<double>::quiet_NaN()));
    m.cost_d.assign(S, std::vector<Vec>(A));
    for (const auto& row : require<json>(j, "transition")) {
        std::vector<Outcome> outs;
        for (const auto& oc : require<json>(row, "outcomes"))
            outs.push_back({detail::find_id(m.states, require<std::string>(oc, "next"), "state"),
                            detail::parse_obs(m, require<json>(oc, "obs")), require<double>(oc, "p")});
        for (int s : detail::match_states(m, require<json>(row, "state")))
            for (int a : detail::match_actions(m, require<json>(row, "action"))) m.transition[s][a] = outs;
    }
    for (const auto& row : require<json>(j, "cost")) {
        const double c = require<double>(row, "c");
        const Vec d = require<Vec>(row, "d");
        for (int s : detail::match_states(m, require<json>(row, "state")))
            for (int a : detail::match_actions(m, require<json>(row, "action"))) {
                m.cost_c[s][a] = c;
                m.cost_d[s][a] = d;
            }
    }
    for (const auto& oc : require<json>(j, "initial"))
        m.initial.push_back({detail::find_id(m.states, require<std::string>(oc, "state"), "state"),
                             detail::parse_obs(m, require<json>(oc, "obs")), require<double>(oc, "p")});
    if (j.contains("slater") && !j.at("slater").is_null()) {
        const auto& sl = j.at("slater");
        SlaterPair sp;
        const auto ids = detail::strings(require<json>(sl, "policy_ref"), "slater.policy_ref");
        if (static_cast<int>(ids.size()) != m.num_agents) throw ValidationError("slater.policy_ref needs one action per agent");
        for (int n = 0; n < m.num_agents; ++n) sp.actions.push_back(detail::find_id(m.actions[n], ids[n], "action"));
        sp.zeta = require<double>(sl, "zeta");
        m.slater = sp;
    }
    return m;
}

inline json model_to_json(const ModelSpec& m) {
    json j;
    j["name"] = m.name;
    j["num_agents"] = m.num_agents;
    j["states"] = m.states;
    j["common_obs"] = m.common_obs;
    j["private_obs"] = m.private_obs;
    j["actions"] = m.actions;
    j["discount"] = m.discount;
    j["kappa"] = m.kappa;
    json tr = json::array(), cost = json::array();
    for (int s = 0; s < m.num_states(); ++s)
        for (int a = 0; a < m.num_joint_actions(); ++a) {
            json outs = json::array();
            for (const auto& oc : m.transition[s][a])
                outs.push_back({{"next", m.states[oc.s]}, {"obs", detail::obs_json(m, oc.o)}, {"p", oc.p}});
            tr.push_back({{"state", m.states[s]}, {"action", detail::action_json(m, a)}, {"outcomes", outs}});
            cost.push_back({{"state", m.states[s]}, {"action", detail::action_json(m, a)}, {"c", m.cost_c[s][a]},
                            {"d", m.cost_d[s][a]}});
        }
    j["transition"] = tr;
    j["cost"] = cost;
    json init = json::array();
    for (const auto& oc : m.initial) init.push_back({{"state", m.states[oc.s]}, {"obs", detail::obs_json(m, oc.o)}, {"p", oc.p}});
    j["initial"] = init;
    if (m.slater) {
        json ref = json::array();
        for (int n = 0; n < m.num_agents; ++n) ref.push_back(m.actions[n][m.slater->actions[n]]);
        j["slater"] = {{"policy_ref", ref}, {"zeta", m.slater->zeta}};
    }
    return j;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
    }
}

inline ModelSpec load_model(const std::string& path) { return model_from_json(read_json_file(path)); }

/// identity | constant | window:k | belief | file:<path>, where the file holds
/// {"kind": "...", "k": ...}.
inline GeneratorBundle load_generator(const std::string& spec) {
    if (spec.rfind("file:", 0) == 0) {
        const auto j = read_json_file(spec.substr(5));
        std::string kind = detail::require<std::string>(j, "kind");
        if (kind == "window") kind += ":" + std::to_string(detail::require<int>(j, "k"));
        return builtin_generator(kind);
    }
    return builtin_generator(spec);
}

inline Vec parse_lambda(const std::string& s) {
    Vec out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            size_t used = 0;
            out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw DomainError("cannot parse multiplier '" + item + "'");
        }
    }
    return out;
}

}  // namespace macp

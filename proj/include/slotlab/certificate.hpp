#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "slotlab/errors.hpp"

namespace slotlab {

struct ResidualEntry {
    std::string name;
    double value = 0.0;
    double tolerance = 0.0;
    bool pass = false;
};

// Outcome of one numeric check. The verdict is pass iff every named residual is
// within its tolerance; lower-bound claims are encoded as (floor - observed)
// with tolerance 0 so the invariant stays uniform. `info` carries raw values
// that are reported but not gated. Wall time is kept in memory for budget
// checks and excluded from canonical serialization so reruns are byte-stable.
struct TheoryCertificate {
    std::string id;
    std::string description;
    std::vector<ResidualEntry> residuals;
    std::map<std::string, double> info;
    bool verdict = false;
    double wall_ms = 0.0;

    void add_residual(const std::string& name, double value, double tolerance) {
        residuals.push_back({name, value, tolerance, value <= tolerance});
    }

    // Claim that `observed >= floor`: encoded so pass means the floor holds.
    void add_floor(const std::string& name, double observed, double floor) {
        residuals.push_back({name, floor - observed, 0.0, floor - observed <= 0.0});
        info[name + "_observed"] = observed;
    }

    void finalize() {
        verdict = true;
        for (const auto& r : residuals)
            if (!r.pass) verdict = false;
    }

    nlohmann::ordered_json to_json(bool include_timing = false) const {
        nlohmann::ordered_json j;
        j["id"] = id;
        j["description"] = description;
        nlohmann::ordered_json rs = nlohmann::ordered_json::array();
        for (const auto& r : residuals) {
            nlohmann::ordered_json e;
            e["name"] = r.name;
            e["value"] = r.value;
            e["tolerance"] = r.tolerance;
            e["pass"] = r.pass;
            rs.push_back(e);
        }
        j["residuals"] = rs;
        nlohmann::ordered_json inf = nlohmann::ordered_json::object();
        for (const auto& [k, v] : info) inf[k] = v;
        j["info"] = inf;
        j["verdict"] = verdict ? "pass" : "fail";
        if (include_timing) j["wall_ms"] = wall_ms;
        return j;
    }
};

inline TheoryCertificate certificate_from_json(const nlohmann::json& j) {
    TheoryCertificate c;
    c.id = j.at("id").get<std::string>();
    c.description = j.at("description").get<std::string>();
    for (const auto& e : j.at("residuals")) {
        ResidualEntry r;
        r.name = e.at("name").get<std::string>();
        r.value = e.at("value").get<double>();
        r.tolerance = e.at("tolerance").get<double>();
        r.pass = e.at("pass").get<bool>();
        c.residuals.push_back(r);
    }
    for (const auto& [k, v] : j.at("info").items()) c.info[k] = v.get<double>();
    c.verdict = j.at("verdict").get<std::string>() == "pass";
    if (j.contains("wall_ms")) c.wall_ms = j.at("wall_ms").get<double>();
    return c;
}

} // namespace slotlab

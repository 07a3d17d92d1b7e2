#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "controller.hpp"
#include "elements.hpp"

// JSON configuration files.
//
// Element file (one CgLp filter):
//   {"schema_version": 1, "name": "sosre", "kind": "SOSRE", "omega_ralpha": 10.0,
//    "alpha": 1.13, "beta_r": 1.0, "omega_f": 1000.0, "gamma": [0.1],
//    "extra_lowpass": {"order": 1, "omega": 1000.0, "damping": 1.0}}   (FORE only)
//
// Controller file (tamed derivative, CgLp or low-pass, PI, plant):
//   {"schema_version": 1, "name": "sosre",
//    "plant": {"mass": 11.11, "damping": 40.0, "stiffness": 10000.0},
//    "cglp": {<element fields without schema_version/name>},           (optional)
//    "lowpass": {"order": 2, "omega": 1000.0, "damping": 1.0},          (optional)
//    "targets": {"bandwidth": 100.0, "phase_margin_deg": 5.0, "integrator_ratio": 10.0},
//    "trigger": "element_input" | "loop_error",
//    "tuning": {"k_p": ..., "omega_i": ..., "omega_d": ..., "omega_t": ...}}  (optional, skips auto-tuning)

namespace resetlab {

inline constexpr int kSchemaVersion = 1;

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) throw InvalidConfig(std::string(where) + " must be a JSON object");
    for (const auto& item : j.items()) {
        bool ok = false;
        for (auto a : allowed) ok = ok || item.key() == a;
        if (!ok) throw InvalidConfig("unknown field '" + item.key() + "' in " + std::string(where));
    }
}

inline double number(const nlohmann::json& j, const char* key, std::string_view where) {
    if (!j.contains(key)) throw InvalidConfig("missing field '" + std::string(key) + "' in " + std::string(where));
    const auto& v = j.at(key);
    if (!v.is_number()) throw InvalidConfig("field '" + std::string(key) + "' in " + std::string(where) + " must be a number");
    return v.get<double>();
}

inline double number_or(const nlohmann::json& j, const char* key, double fallback, std::string_view where) {
    return j.contains(key) ? number(j, key, where) : fallback;
}

inline void check_schema(const nlohmann::json& j) {
    if (!j.contains("schema_version")) throw InvalidConfig("missing field 'schema_version'");
    const auto& v = j.at("schema_version");
    if (!v.is_number_integer() || v.get<int>() != kSchemaVersion) {
        throw InvalidConfig("unsupported schema_version " + v.dump() + " (expected " + std::to_string(kSchemaVersion) + ")");
    }
}

inline std::string text_or(const nlohmann::json& j, const char* key, std::string fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_string()) throw InvalidConfig("field '" + std::string(key) + "' must be a string");
    return j.at(key).get<std::string>();
}

} // namespace detail

inline LowpassSpec parse_lowpass(const nlohmann::json& j, std::string_view where = "lowpass") {
    detail::reject_unknown(j, where, {"order", "omega", "damping"});
    LowpassSpec s;
    if (j.contains("order")) {
        if (!j.at("order").is_number_integer()) throw InvalidConfig("lowpass order must be an integer");
        s.order = j.at("order").get<int>();
    }
    s.omega = detail::number_or(j, "omega", s.omega, where);
    s.damping = detail::number_or(j, "damping", s.damping, where);
    s.validate();
    return s;
}

inline nlohmann::json to_json(const LowpassSpec& s) {
    return {{"order", s.order}, {"omega", s.omega}, {"damping", s.damping}};
}

/// CgLp record. `extra` names keys the caller handles (schema_version, name).
inline CgLpConfig parse_cglp(const nlohmann::json& j, std::initializer_list<std::string_view> extra = {},
                             std::string_view where = "cglp") {
    if (!j.is_object()) throw InvalidConfig(std::string(where) + " must be a JSON object");
    for (const auto& item : j.items()) {
        bool ok = false;
        for (std::string_view a : {"kind", "omega_ralpha", "alpha", "beta_r", "omega_r", "omega_f", "gamma",
                                  "extra_lowpass"})
            ok = ok || item.key() == a;
        for (auto a : extra) ok = ok || item.key() == a;
        if (!ok) throw InvalidConfig("unknown field '" + item.key() + "' in " + std::string(where));
    }
    CgLpConfig c;
    if (!j.contains("kind") || !j.at("kind").is_string()) throw InvalidConfig("missing string field 'kind' in " + std::string(where));
    c.kind = parse_cglp_kind(j.at("kind").get<std::string>());
    c.omega_ralpha = detail::number(j, "omega_ralpha", where);
    c.alpha = detail::number(j, "alpha", where);
    c.beta_r = detail::number_or(j, "beta_r", 1.0, where);
    c.omega_f = detail::number(j, "omega_f", where);
    if (!j.contains("gamma")) throw InvalidConfig("missing field 'gamma' in " + std::string(where));
    const auto& g = j.at("gamma");
    if (g.is_number()) {
        c.gamma = {g.get<double>()};
    } else if (g.is_array()) {
        for (const auto& v : g) {
            if (!v.is_number()) throw InvalidConfig("gamma entries must be numbers");
            c.gamma.push_back(v.get<double>());
        }
    } else {
        throw InvalidConfig("gamma must be a number or an array");
    }
    if (j.contains("extra_lowpass") && !j.at("extra_lowpass").is_null()) {
        c.extra_lowpass = parse_lowpass(j.at("extra_lowpass"), "extra_lowpass");
    }
    c.validate();
    // omega_r is derived; accepted only when it agrees with alpha * omega_ralpha
    if (j.contains("omega_r")) {
        const double wr = detail::number(j, "omega_r", where);
        if (std::abs(wr - c.omega_r()) > 1e-9 * c.omega_r())
            throw InvalidConfig("omega_r disagrees with alpha * omega_ralpha in " + std::string(where));
    }
    return c;
}

inline nlohmann::json to_json(const CgLpConfig& c) {
    nlohmann::json j = {{"kind", std::string(to_string(c.kind))},
                        {"omega_ralpha", c.omega_ralpha},
                        {"alpha", c.alpha},
                        {"omega_r", c.omega_r()},
                        {"omega_f", c.omega_f},
                        {"gamma", c.gamma}};
    if (c.kind != CgLpKind::FORE) j["beta_r"] = c.beta_r;
    if (c.extra_lowpass) j["extra_lowpass"] = to_json(*c.extra_lowpass);
    return j;
}

struct ElementConfig {
    std::string name;
    CgLpConfig cglp;
};

inline ElementConfig parse_element_config(const nlohmann::json& j) {
    detail::check_schema(j);
    ElementConfig e;
    e.cglp = parse_cglp(j, {"schema_version", "name"}, "element config");
    e.name = detail::text_or(j, "name", std::string(to_string(e.cglp.kind)));
    return e;
}

struct PlantParams {
    double mass = 11.11;
    double damping = 40.0;
    double stiffness = 10000.0;

    [[nodiscard]] PlantModel model() const { return PlantModel::mass_spring_damper(mass, damping, stiffness); }
};

struct ExplicitTuning {
    double k_p = 0.0;
    double omega_i = 0.0;
    double omega_d = 0.0;
    double omega_t = 0.0;
};

struct ControllerConfig {
    std::string name;
    PlantParams plant;
    std::optional<CgLpConfig> cglp;
    std::optional<LowpassSpec> lowpass;
    ChainTargets targets;
    ResetTrigger trigger = ResetTrigger::ElementInput;
    std::optional<ExplicitTuning> tuning;

    /// Tuned (or explicitly parameterized) controller chain.
    [[nodiscard]] ControllerChain build_chain() const {
        std::optional<ResetSystem> element;
        if (cglp) element = make_cglp(*cglp);
        if (!tuning) {
            ChainTargets t = targets;
            t.lowpass = lowpass;
            return make_pid_chain(plant.model(), element, t, name);
        }
        ControllerChain c;
        c.name = name;
        c.cglp = element;
        if (lowpass) c.lowpass = resetlab::lowpass(*lowpass);
        c.k_p = tuning->k_p;
        c.omega_i = tuning->omega_i;
        c.omega_d = tuning->omega_d;
        c.omega_t = tuning->omega_t;
        c.validate();
        return c;
    }
};

inline std::string to_string(ResetTrigger t) {
    return t == ResetTrigger::ElementInput ? "element_input" : "loop_error";
}

inline ResetTrigger parse_trigger(const std::string& s) {
    if (s == "element_input") return ResetTrigger::ElementInput;
    if (s == "loop_error") return ResetTrigger::LoopError;
    throw InvalidConfig("unknown trigger '" + s + "' (expected element_input or loop_error)");
}

inline ControllerConfig parse_controller_config(const nlohmann::json& j) {
    detail::check_schema(j);
    detail::reject_unknown(j, "controller config",
                           {"schema_version", "name", "plant", "cglp", "lowpass", "targets", "trigger", "tuning"});
    ControllerConfig c;
    c.name = detail::text_or(j, "name", "controller");
    if (j.contains("plant")) {
        const auto& p = j.at("plant");
        detail::reject_unknown(p, "plant", {"mass", "damping", "stiffness"});
        c.plant.mass = detail::number_or(p, "mass", c.plant.mass, "plant");
        c.plant.damping = detail::number_or(p, "damping", c.plant.damping, "plant");
        c.plant.stiffness = detail::number_or(p, "stiffness", c.plant.stiffness, "plant");
        (void)c.plant.model(); // validates
    }
    if (j.contains("cglp") && !j.at("cglp").is_null()) c.cglp = parse_cglp(j.at("cglp"));
    if (j.contains("lowpass") && !j.at("lowpass").is_null()) c.lowpass = parse_lowpass(j.at("lowpass"));
    if (c.cglp && c.lowpass) throw InvalidConfig("a chain holds either a cglp or a lowpass, not both");
    if (j.contains("targets")) {
        const auto& t = j.at("targets");
        detail::reject_unknown(t, "targets", {"bandwidth", "phase_margin_deg", "integrator_ratio"});
        c.targets.bandwidth = detail::number_or(t, "bandwidth", c.targets.bandwidth, "targets");
        c.targets.phase_margin_deg = detail::number_or(t, "phase_margin_deg", c.targets.phase_margin_deg, "targets");
        c.targets.integrator_ratio = detail::number_or(t, "integrator_ratio", c.targets.integrator_ratio, "targets");
        if (!(c.targets.bandwidth > 0.0) || !(c.targets.integrator_ratio > 0.0)) {
            throw InvalidConfig("targets must be positive");
        }
    }
    if (j.contains("trigger")) {
        if (!j.at("trigger").is_string()) throw InvalidConfig("trigger must be a string");
        c.trigger = parse_trigger(j.at("trigger").get<std::string>());
    }
    if (j.contains("tuning") && !j.at("tuning").is_null()) {
        const auto& t = j.at("tuning");
        detail::reject_unknown(t, "tuning", {"k_p", "omega_i", "omega_d", "omega_t"});
        c.tuning = ExplicitTuning{detail::number(t, "k_p", "tuning"), detail::number(t, "omega_i", "tuning"),
                                  detail::number(t, "omega_d", "tuning"), detail::number(t, "omega_t", "tuning")};
    }
    return c;
}

inline nlohmann::json to_json(const ControllerConfig& c) {
    nlohmann::json j = {{"schema_version", kSchemaVersion},
                        {"name", c.name},
                        {"plant", {{"mass", c.plant.mass}, {"damping", c.plant.damping}, {"stiffness", c.plant.stiffness}}},
                        {"targets",
                         {{"bandwidth", c.targets.bandwidth},
                          {"phase_margin_deg", c.targets.phase_margin_deg},
                          {"integrator_ratio", c.targets.integrator_ratio}}},
                        {"trigger", to_string(c.trigger)}};
    if (c.cglp) j["cglp"] = to_json(*c.cglp);
    if (c.lowpass) j["lowpass"] = to_json(*c.lowpass);
    if (c.tuning) {
        j["tuning"] = {{"k_p", c.tuning->k_p},
                       {"omega_i", c.tuning->omega_i},
                       {"omega_d", c.tuning->omega_d},
                       {"omega_t", c.tuning->omega_t}};
    }
    return j;
}

inline nlohmann::json to_json(const ControllerChain& c) {
    nlohmann::json j = {{"name", c.name}, {"k_p", c.k_p}, {"proportional_only", c.proportional_only}};
    if (!c.proportional_only) {
        j["omega_i"] = c.omega_i;
        j["omega_d"] = c.omega_d;
        j["omega_t"] = c.omega_t;
    }
    j["has_cglp"] = c.cglp.has_value();
    j["has_lowpass"] = c.lowpass.has_value();
    return j;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidConfig(path.string() + ": " + e.what());
    }
}

inline ElementConfig load_element_config(const std::filesystem::path& path) {
    auto e = parse_element_config(read_json_file(path));
    return e;
}

inline ControllerConfig load_controller_config(const std::filesystem::path& path) {
    return parse_controller_config(read_json_file(path));
}

} // namespace resetlab

// resetlab command-line front end.
//
//   resetlab_cli hosidf      --config sosre.json [--config ...] --orders 1,3,5,7
//   resetlab_cli simulate    --config sosre_chain.json --ref sin --omega 10
//   resetlab_cli sweep-error --config a.json --config b.json --omega-min 2 --omega-max 50
//   resetlab_cli stability   --config sosre_chain.json
//   resetlab_cli bode        --config pid_chain.json
//
// Exit codes: 0 ok, 2 usage/config error, 3 numeric failure, 4 divergence or
// event storm, 5 base linear loop unstable, 1 anything else.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "resetlab/resetlab.hpp"

namespace fs = std::filesystem;
using namespace resetlab;
using nlohmann::json;

#ifndef RESETLAB_VERSION
#define RESETLAB_VERSION "dev"
#endif

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitSimulation = 4;
constexpr int kExitUnstable = 5;

struct ExitError {
    int code;
    std::string message;
};

struct Options {
    std::vector<std::string> configs;
    std::string out_dir = ".";
    std::vector<int> orders{1, 3, 5, 7};
    std::optional<double> omega_min, omega_max;
    std::optional<std::size_t> points;
    std::string ref = "sin";
    double omega = 10.0;
    double periods = 40.0;
    std::optional<double> dt;
};

class Run {
public:
    Run(std::string command, const Options& opt) : command_(std::move(command)), opt_(opt) {
        start_ = std::chrono::steady_clock::now();
        fs::create_directories(opt_.out_dir);
    }

    std::ofstream open(const std::string& name) {
        for (const auto& f : files_)
            if (f == name) throw ExitError{1, "output file " + name + " written twice"};
        files_.push_back(name);
        std::ofstream os(fs::path(opt_.out_dir) / name, std::ios::binary | std::ios::trunc);
        if (!os) throw ExitError{1, "cannot write " + (fs::path(opt_.out_dir) / name).string()};
        return os;
    }

    json& params() { return params_; }

    void write_manifest() {
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        files_.push_back("manifest.json");
        json m = {{"command", command_},
                  {"config_paths", opt_.configs},
                  {"out_dir", opt_.out_dir},
                  {"tool_version", RESETLAB_VERSION},
                  {"parameters", params_},
                  {"randomized_search", false},
                  {"seed", nullptr},
                  {"wall_clock_s", secs},
                  {"files", files_}};
        std::ofstream os(fs::path(opt_.out_dir) / "manifest.json", std::ios::binary | std::ios::trunc);
        os << m.dump(2) << '\n';
    }

private:
    std::string command_;
    const Options& opt_;
    std::chrono::steady_clock::time_point start_;
    std::vector<std::string> files_;
    json params_ = json::object();
};

bool is_controller_config(const json& j) {
    return j.is_object() && !j.contains("kind");
}

std::vector<double> grid_from(const Options& opt, double lo, double hi, std::size_t points) {
    return log_grid(opt.omega_min.value_or(lo), opt.omega_max.value_or(hi), opt.points.value_or(points));
}

std::string file_stem(const std::string& name) {
    std::string s = name;
    for (auto& c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) c = '_';
    return s;
}

void report_gaps(const HarmonicResponse& r, int& status) {
    for (auto k : r.gaps) {
        std::cerr << "numeric failure in " << r.source << " at omega=" << fmt_num(r.omega[k]) << " rad/s\n";
        status = kExitNumeric;
    }
}

int cmd_hosidf(const Options& opt) {
    if (opt.configs.empty()) throw ExitError{kExitConfig, "hosidf needs at least one --config"};
    Run run("hosidf", opt);
    const auto grid = grid_from(opt, 1e-1, 1e4, 500);
    run.params()["orders"] = opt.orders;
    run.params()["omega_min"] = grid.front();
    run.params()["omega_max"] = grid.back();
    run.params()["points"] = grid.size();
    int status = 0;
    json systems = json::array();
    for (const auto& path : opt.configs) {
        const json raw = read_json_file(path);
        if (!is_controller_config(raw)) {
            const auto e = parse_element_config(raw);
            const auto r = hosidf_sweep(make_cglp(e.cglp), opt.orders, grid, e.name);
            report_gaps(r, status);
            auto os = run.open("hosidf_" + file_stem(e.name) + ".csv");
            write_csv(os, r);
            systems.push_back({{"name", e.name}, {"type", "element"}, {"cglp", to_json(e.cglp)}});
            continue;
        }
        const auto c = parse_controller_config(raw);
        const auto chain = c.build_chain();
        const auto plant = c.plant.model();
        HarmonicResponse df;
        if (chain.cglp) {
            df = hosidf_sweep(*chain.cglp, opt.orders, grid, c.name);
        } else {
            df.source = c.name;
            df.omega = grid;
            df.orders = opt.orders;
            df.values.assign(opt.orders.size(), std::vector<Complex>(grid.size(), Complex(0.0)));
            for (std::size_t o = 0; o < opt.orders.size(); ++o)
                if (opt.orders[o] == 1) std::fill(df.values[o].begin(), df.values[o].end(), Complex(1.0));
        }
        report_gaps(df, status);
        const auto ol = open_loop_hosidf(df, chain.linear_part(), plant.model(), grid);
        auto os = run.open("hosidf_" + file_stem(c.name) + "_open_loop.csv");
        write_csv(os, ol);
        systems.push_back({{"name", c.name}, {"type", "open_loop"}, {"config", to_json(c)}, {"tuned", to_json(chain)}});
    }
    run.params()["systems"] = systems;
    run.write_manifest();
    return status;
}

int cmd_simulate(const Options& opt) {
    if (opt.configs.size() != 1) throw ExitError{kExitConfig, "simulate takes exactly one --config"};
    if (!(opt.omega > 0.0)) throw ExitError{kExitConfig, "--omega must be positive"};
    const auto c = load_controller_config(opt.configs.front());
    const auto chain = c.build_chain();
    const auto plant = c.plant.model();
    Run run("simulate", opt);

    const double period = 2.0 * std::numbers::pi / opt.omega;
    Signal ref;
    if (opt.ref == "sin") ref = Signal::sine(opt.omega);
    else if (opt.ref == "step") ref = Signal::step(1.0);
    else if (opt.ref == "zero") ref = Signal::zero();
    else throw ExitError{kExitConfig, "--ref must be sin, step or zero"};

    SimConfig cfg;
    cfg.trigger = c.trigger;
    cfg.periods = opt.periods;
    cfg.dt = opt.dt;
    if (opt.ref != "sin") {
        cfg.duration = opt.periods * period;
        // same step as the sine run, so the metrics window starts on a sample
        if (!cfg.dt) cfg.dt = detail::plan_steps(close_loop(chain, plant, c.trigger).A, Signal::sine(opt.omega), cfg).dt;
    }
    const SimTrace tr = simulate_closed_loop(chain, plant, ref, cfg);
    const double keep = opt.periods * cfg.window_fraction;
    const SimTrace ss = extract_steady_state(tr, period, keep);
    const auto m = error_metrics(ss);

    const std::string stem = file_stem(c.name);
    {
        auto os = run.open("trace_" + stem + ".csv");
        write_trace_csv(os, tr);
    }
    {
        auto os = run.open("events_" + stem + ".csv");
        write_events_csv(os, tr);
    }
    {
        auto os = run.open("metrics_" + stem + ".json");
        json mj = {{"L2", m.l2},
                   {"Linf", m.linf},
                   {"window_start_s", ss.time_offset},
                   {"window_periods", keep},
                   {"events", tr.events.size()},
                   {"dt", tr.dt}};
        os << mj.dump(2) << '\n';
    }
    run.params() = {{"ref", opt.ref},
                    {"omega", opt.omega},
                    {"periods", opt.periods},
                    {"dt", tr.dt},
                    {"config", to_json(c)},
                    {"tuned", to_json(chain)}};
    run.write_manifest();
    std::cout << c.name << ": L2=" << fmt_num(m.l2) << " Linf=" << fmt_num(m.linf) << '\n';
    return 0;
}

int cmd_sweep_error(const Options& opt) {
    if (opt.configs.empty()) throw ExitError{kExitConfig, "sweep-error needs at least one --config"};
    std::vector<ControllerConfig> cfgs;
    std::vector<ControllerChain> chains;
    for (const auto& p : opt.configs) {
        cfgs.push_back(load_controller_config(p));
        chains.push_back(cfgs.back().build_chain());
    }
    Run run("sweep-error", opt);
    const auto grid = grid_from(opt, 1.0, 100.0, 30);

    const std::size_t nc = chains.size();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<ErrorMetrics> out(nc * grid.size(), ErrorMetrics{nan, nan});
    std::vector<std::string> failures(nc * grid.size());
    parallel_for(nc * grid.size(), [&](std::size_t idx) {
        const std::size_t ci = idx / grid.size();
        const std::size_t k = idx % grid.size();
        SimConfig sc;
        sc.trigger = cfgs[ci].trigger;
        sc.periods = opt.periods;
        sc.dt = opt.dt;
        try {
            out[idx] = sinusoidal_error_metrics(chains[ci], cfgs[ci].plant.model(), grid[k], sc);
        } catch (const Error& e) {
            failures[idx] = e.what();
        }
    });

    auto os = run.open("sweep_error.csv");
    os << "omega_rad_s";
    for (const auto& c : cfgs) os << ',' << file_stem(c.name) << "_linf," << file_stem(c.name) << "_l2";
    os << '\n';
    for (std::size_t k = 0; k < grid.size(); ++k) {
        os << fmt_num(grid[k]);
        for (std::size_t ci = 0; ci < nc; ++ci) {
            const auto& m = out[ci * grid.size() + k];
            os << ',' << fmt_num(m.linf) << ',' << fmt_num(m.l2);
        }
        os << '\n';
    }
    json gaps = json::array();
    for (std::size_t idx = 0; idx < failures.size(); ++idx) {
        if (failures[idx].empty()) continue;
        const auto& name = cfgs[idx / grid.size()].name;
        const double w = grid[idx % grid.size()];
        std::cerr << "gap: " << name << " at omega=" << fmt_num(w) << ": " << failures[idx] << '\n';
        gaps.push_back({{"controller", name}, {"omega", w}, {"error", failures[idx]}});
    }
    json ctrl = json::array();
    for (std::size_t ci = 0; ci < nc; ++ci) ctrl.push_back({{"config", to_json(cfgs[ci])}, {"tuned", to_json(chains[ci])}});
    run.params() = {{"omega_min", grid.front()},
                    {"omega_max", grid.back()},
                    {"points", grid.size()},
                    {"periods", opt.periods},
                    {"controllers", ctrl},
                    {"gaps", gaps}};
    run.write_manifest();
    return 0;
}

int cmd_stability(const Options& opt) {
    if (opt.configs.size() != 1) throw ExitError{kExitConfig, "stability takes exactly one --config"};
    const auto c = load_controller_config(opt.configs.front());
    const auto chain = c.build_chain();
    const auto plant = c.plant.model();
    Run run("stability", opt);

    const auto cl = close_loop(chain, plant, c.trigger);
    const auto part = partition_closed_loop(cl);
    const StabilitySearchOptions so;
    const auto res = quadratic_stability_search(part, so);

    json report = to_json(res, so.slack);
    report["partition"] = to_json(part);
    const auto base = chain.base_linear();
    const auto pm = loop_phase_margin(
        [&](double w) { return base.first_harmonic(w) * linear_freq_response(plant.model(), w); }, c.targets.bandwidth);
    if (pm) report["base_linear_phase_margin"] = {{"omega_c", pm->omega_c}, {"margin_deg", pm->margin_deg}};
    if (chain.cglp) {
        try {
            const auto df = loop_phase_margin(
                [&](double w) { return chain.first_harmonic(w) * linear_freq_response(plant.model(), w); },
                c.targets.bandwidth);
            if (df) report["first_harmonic_phase_margin"] = {{"omega_c", df->omega_c}, {"margin_deg", df->margin_deg}};
        } catch (const Error&) {
        }
    }
    {
        auto os = run.open("stability_" + file_stem(c.name) + ".json");
        os << report.dump(2) << '\n';
    }
    run.params() = {{"config", to_json(c)}, {"tuned", to_json(chain)}, {"slack", so.slack}};
    run.write_manifest();
    std::cout << c.name << ": " << to_string(res.status);
    if (!res.message.empty()) std::cout << " (" << res.message << ")";
    std::cout << '\n';
    return res.status == StabilityStatus::BaseLinearUnstable ? kExitUnstable : 0;
}

void write_bode_rows(std::ostream& os, const std::string& system, const std::vector<double>& grid,
                     const std::vector<Complex>& values) {
    const auto phase = unwrapped_phase_deg(values);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        os << fmt_num(grid[k]) << ',' << system << ',' << fmt_num(values[k].real()) << ',' << fmt_num(values[k].imag())
           << ',' << fmt_num(magnitude_db(values[k])) << ',' << fmt_num(phase[k]) << '\n';
    }
}

int cmd_bode(const Options& opt) {
    if (opt.configs.empty()) throw ExitError{kExitConfig, "bode needs at least one --config"};
    Run run("bode", opt);
    const auto grid = grid_from(opt, 1e-1, 1e4, 500);
    json systems = json::array();
    for (const auto& path : opt.configs) {
        const json raw = read_json_file(path);
        auto eval = [&](const StateSpaceModel& m) {
            std::vector<Complex> v(grid.size());
            for (std::size_t k = 0; k < grid.size(); ++k) v[k] = linear_freq_response(m, grid[k]);
            return v;
        };
        if (!is_controller_config(raw)) {
            const auto e = parse_element_config(raw);
            auto os = run.open("bode_" + file_stem(e.name) + ".csv");
            os << "omega_rad_s,system,re,im,mag_db,phase_deg\n";
            write_bode_rows(os, "element_base_linear", grid, eval(make_cglp(e.cglp).base()));
            systems.push_back({{"name", e.name}, {"cglp", to_json(e.cglp)}});
            continue;
        }
        const auto c = parse_controller_config(raw);
        const auto chain = c.build_chain().base_linear();
        const auto plant = c.plant.model().model();
        const auto ctrl = eval(chain.controller().base());
        const auto p = eval(plant);
        std::vector<Complex> l(grid.size());
        for (std::size_t k = 0; k < grid.size(); ++k) l[k] = ctrl[k] * p[k];
        auto os = run.open("bode_" + file_stem(c.name) + ".csv");
        os << "omega_rad_s,system,re,im,mag_db,phase_deg\n";
        write_bode_rows(os, "plant", grid, p);
        write_bode_rows(os, "controller_base_linear", grid, ctrl);
        write_bode_rows(os, "open_loop_base_linear", grid, l);
        systems.push_back({{"name", c.name}, {"config", to_json(c)}, {"tuned", to_json(c.build_chain())}});
    }
    run.params() = {{"omega_min", grid.front()}, {"omega_max", grid.back()}, {"points", grid.size()}, {"systems", systems}};
    run.write_manifest();
    return 0;
}

int classify(const Error& e) {
    if (dynamic_cast<const InvalidConfig*>(&e) || dynamic_cast<const DimensionMismatch*>(&e)) return kExitConfig;
    if (dynamic_cast<const Divergence*>(&e) || dynamic_cast<const EventStorm*>(&e) ||
        dynamic_cast<const NonFiniteState*>(&e))
        return kExitSimulation;
    if (dynamic_cast<const BaseLinearUnstable*>(&e)) return kExitUnstable;
    return kExitNumeric;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reset control analysis: HOSIDF, hybrid simulation, quadratic stability"};
    app.set_version_flag("--version", std::string(RESETLAB_VERSION));
    app.require_subcommand(1);
    Options opt;
    std::string orders_text;

    auto add_common = [&](CLI::App* sub, bool many) {
        auto* c = sub->add_option("--config", opt.configs, many ? "config file (repeatable)" : "config file")->required();
        if (!many) c->expected(1);
        sub->add_option("--out-dir", opt.out_dir, "output directory")->capture_default_str();
    };
    auto add_grid = [&](CLI::App* sub) {
        sub->add_option("--omega-min", opt.omega_min, "lowest frequency [rad/s]");
        sub->add_option("--omega-max", opt.omega_max, "highest frequency [rad/s]");
        sub->add_option("--points", opt.points, "number of log-spaced frequencies");
    };

    auto* hos = app.add_subcommand("hosidf", "higher-order describing functions of elements or open loops");
    add_common(hos, true);
    add_grid(hos);
    hos->add_option("--orders", orders_text, "comma-separated harmonic orders (default 1,3,5,7)");

    auto* sim = app.add_subcommand("simulate", "closed-loop hybrid simulation");
    add_common(sim, false);
    sim->add_option("--ref", opt.ref, "reference signal")->check(CLI::IsMember({"sin", "step", "zero"}))->capture_default_str();
    sim->add_option("--omega", opt.omega, "reference frequency [rad/s]")->capture_default_str();
    sim->add_option("--periods", opt.periods, "simulated periods")->capture_default_str();
    sim->add_option("--dt", opt.dt, "fixed step [s]");

    auto* swp = app.add_subcommand("sweep-error", "steady-state error versus reference frequency");
    add_common(swp, true);
    add_grid(swp);
    swp->add_option("--periods", opt.periods, "simulated periods per point")->capture_default_str();
    swp->add_option("--dt", opt.dt, "fixed step [s]");

    auto* stab = app.add_subcommand("stability", "quadratic stability certificate search");
    add_common(stab, false);

    auto* bode = app.add_subcommand("bode", "linear frequency responses (A_rho = I)");
    add_common(bode, true);
    add_grid(bode);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (!orders_text.empty()) {
            opt.orders.clear();
            std::stringstream ss(orders_text);
            std::string tok;
            while (std::getline(ss, tok, ',')) {
                try {
                    std::size_t used = 0;
                    const int n = std::stoi(tok, &used);
                    if (used != tok.size()) throw std::invalid_argument(tok);
                    opt.orders.push_back(n);
                } catch (const std::exception&) {
                    throw ExitError{kExitConfig, "bad harmonic order '" + tok + "'"};
                }
            }
        }
        if (*hos) return cmd_hosidf(opt);
        if (*sim) return cmd_simulate(opt);
        if (*swp) return cmd_sweep_error(opt);
        if (*stab) return cmd_stability(opt);
        if (*bode) return cmd_bode(opt);
    } catch (const ExitError& e) {
        std::cerr << "error: " << e.message << '\n';
        return e.code;
    } catch (const NearSingularFrequency& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return classify(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 1;
}

// Command-line front end: fitting, performance checks, optimization runs,
// batch matrices, replays and the DP cross-check.
//
// Exit codes: 0 ok, 2 config/schema violation, 3 solver non-optimal,
// 4 internal error.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "powertrain/config.hpp"
#include "powertrain/optimize.hpp"
#include "powertrain/oracle.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace powertrain;

namespace {

struct Artifact {
    std::string path;
    std::uint64_t bytes;
    std::string hash;
};

class OutputDir {
public:
    explicit OutputDir(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

    void write(const std::string& rel, const std::string& content) {
        const fs::path p = root_ / rel;
        fs::create_directories(p.parent_path().empty() ? root_ : p.parent_path());
        std::ofstream f(p, std::ios::binary);
        f << content;
        f.close();
        char hash[32];
        std::snprintf(hash, sizeof(hash), "fnv1a64:%016llx",
                      static_cast<unsigned long long>(fnv1a64(content)));
        std::lock_guard<std::mutex> lock(mu_);
        artifacts_.push_back({rel, content.size(), hash});
    }

    void finalize() {
        json m;
        m["artifacts"] = json::array();
        auto sorted = artifacts_;
        std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
        for (const auto& a : sorted)
            m["artifacts"].push_back({{"path", a.path}, {"bytes", a.bytes}, {"hash", a.hash}});
        std::ofstream f(root_ / "manifest.json", std::ios::binary);
        f << m.dump(2) << "\n";
    }

    const fs::path& root() const { return root_; }

private:
    fs::path root_;
    std::vector<Artifact> artifacts_;
    std::mutex mu_;
};

config::PowertrainConfig load_config(const std::string& path) {
    json j;
    if (path.empty()) {
        j = config::to_json(config::default_config());
    } else {
        std::ifstream f(path);
        if (!f) throw config::SchemaError("cannot open config file: " + path, "");
        try {
            j = json::parse(f);
        } catch (const json::exception& e) {
            throw config::SchemaError(std::string("config is not valid JSON: ") + e.what(), "");
        }
    }
    config::apply_env_overrides(j);
    return config::from_json(j);
}

void ensure_motor_model(config::PowertrainConfig& cfg) {
    if (cfg.motor_model) return;
    const auto sm = motor::generate_synthetic_motor(cfg.motor_seed, cfg.motor_limits, cfg.motor_noise);
    motor::FitReport rep;
    cfg.motor_model = motor::fit_loss_models(sm.samples, sm.truth.power_levels, &rep);
}

std::string trajectory_csv(const optimize::Solution& s, const cycle::DriveCycle& dc) {
    std::ostringstream os;
    os << "t,v,P_req,P_brk,P_fd,P_m,omega,gamma,P_sft,P_rtr,P_mgt,P_str,P_wdg,P_inv,P_dc,mdot,P_fan,"
          "P_bat,P_int,E_b,theta_sft,theta_rtr,theta_mgt,theta_str,theta_wdg,theta_ewdg\n";
    const bool full = !s.theta[0].empty();
    for (size_t k = 0; k < s.nodes(); ++k) {
        const auto& p = dc.points[k];
        const double preq = s.P_fd[k] - s.P_brk[k];
        os << format_double(p.t) << ',' << format_double(p.v) << ',' << format_double(preq) << ','
           << format_double(s.P_brk[k]) << ',' << format_double(s.P_fd[k]) << ','
           << format_double(s.P_m[k]) << ',' << format_double(s.omega[k]) << ','
           << format_double(s.gamma[k]) << ',' << format_double(s.P_sft[k]) << ','
           << format_double(s.P_rtr[k]) << ',' << format_double(s.P_mgt[k]) << ','
           << format_double(s.P_str[k]) << ',' << format_double(s.P_wdg[k]) << ','
           << format_double(s.P_inv[k]) << ',' << format_double(s.P_dc[k]) << ','
           << format_double(full ? s.mdot[k] : 0.0) << ',' << format_double(full ? s.P_fan[k] : 0.0) << ','
           << format_double(s.P_bat[k]) << ',' << format_double(s.P_int[k]) << ','
           << format_double(s.E_b[k]);
        for (int i = 0; i < 6; ++i) os << ',' << format_double(full ? s.theta[i][k] : 0.0);
        os << '\n';
    }
    return os.str();
}

json solution_summary(const optimize::Solution& s, const cycle::DriveCycle& dc,
                      const config::PowertrainConfig& cfg) {
    json j;
    j["status"] = solver::to_string(s.status);
    j["fidelity"] = optimize::to_string(s.fidelity);
    j["iterations"] = s.iterations;
    j["delta_Eb_J"] = s.delta_Eb;
    if (std::isfinite(s.delta_Eb_simple)) {
        j["delta_Eb_simple_J"] = s.delta_Eb_simple;
        j["iterations_simple"] = s.iterations_simple;
    }
    if (cfg.drivetrain.kind == plant::TransmissionKind::FGT) j["gamma_fgt"] = s.gamma_fgt;
    j["solver"] = {{"gap", s.solver_gap},
                   {"primal_residual", s.primal_residual},
                   {"dual_residual", s.dual_residual},
                   {"max_rel_gap", s.max_rel_gap}};
    if (s.status == solver::SolveStatus::Optimal) {
        const auto k = optimize::kpis(s, dc, cfg);
        j["kpis"] = {{"delta_Eb_J", k.delta_Eb_J},
                     {"distance_km", k.distance_km},
                     {"Eb_bar_Wh_per_km", k.Eb_bar_Wh_per_km},
                     {"range_km", k.range_km}};
    }
    return j;
}

json audit_json(const optimize::Solution& s) {
    json a;
    a["max_rel_gap"] = s.max_rel_gap;
    // only the worst offenders; the full list repeats per node
    auto entries = s.audit;
    std::sort(entries.begin(), entries.end(),
              [](const auto& x, const auto& y) { return x.rel_gap > y.rel_gap; });
    json list = json::array();
    for (size_t i = 0; i < std::min<size_t>(entries.size(), 50); ++i)
        list.push_back({{"name", entries[i].name}, {"rel_gap", entries[i].rel_gap}});
    a["worst"] = list;
    a["count"] = entries.size();
    return a;
}

json performance_json(const plant::PerformanceReport& rep) {
    auto one = [](const plant::PerformanceCheck& c) {
        return json{{"pass", c.pass}, {"margin", c.margin}, {"detail", c.detail}};
    };
    return json{{"gradeability", one(rep.gradeability)},
                {"top_speed", one(rep.top_speed)},
                {"acceleration", one(rep.acceleration)},
                {"all_pass", rep.all_pass()},
                {"gamma_used", rep.gamma_used}};
}

int cmd_fit_motor(config::PowertrainConfig cfg, OutputDir& out) {
    const auto sm = motor::generate_synthetic_motor(cfg.motor_seed, cfg.motor_limits, cfg.motor_noise);
    motor::FitReport rep;
    const auto model = motor::fit_loss_models(sm.samples, sm.truth.power_levels, &rep);
    {
        std::ostringstream os;
        motor::write_samples_csv(os, sm.samples);
        out.write("loss_samples.csv", os.str());
    }
    out.write("motor_model.json", motor::to_json(model).dump(2) + "\n");
    json j = {{"nrmse_sft", rep.nrmse_sft}, {"nrmse_rtr", rep.nrmse_rtr}, {"nrmse_str", rep.nrmse_str},
              {"nrmse_mgt", rep.nrmse_mgt}, {"nrmse_wdg", rep.nrmse_wdg}, {"nrmse_simple", rep.nrmse_simple},
              {"samples", sm.samples.size()}};
    out.write("summary.json", j.dump(2) + "\n");
    out.finalize();
    std::cout << "fit-motor: nrmse rtr " << rep.nrmse_rtr << ", str " << rep.nrmse_str << ", mgt "
              << rep.nrmse_mgt << ", wdg " << rep.nrmse_wdg << "\n";
    return 0;
}

int cmd_fit_thermal(config::PowertrainConfig cfg, OutputDir& out, std::uint64_t seed) {
    // excitation trajectories simulated from the configured network, then
    // re-identified from a deliberately wrong start
    thermal::ThermalParams truth = cfg.thermal;
    auto make_traj = [&](std::uint64_t s) {
        thermal::ThermalTrajectory tr;
        tr.dt = 1.0;
        Rng rng(s);
        thermal::Losses5 cur = thermal::Losses5::Zero();
        for (int k = 0; k < 300; ++k) {
            if (k % 30 == 0)
                for (int i = 0; i < 5; ++i) cur[i] = rng.uniform(0.0, 900.0);
            tr.losses.push_back(cur);
        }
        tr.theta.assign(tr.losses.size(), thermal::TemperatureState::Constant(truth.theta_col));
        std::vector<thermal::TemperatureState> sim;
        thermal::simulate(tr, truth, &sim);
        tr.theta = sim;
        return tr;
    };
    const auto t1 = make_traj(seed), t2 = make_traj(seed + 1);
    thermal::ThermalParams init = truth;
    for (int i = 0; i < 6; ++i) init.c[i] *= 1.5;
    auto ks = init.conductances();
    for (auto& v : ks) v *= 1.5;
    init.set_conductances(ks);

    thermal::IdentifyReport rep;
    const auto fitted = thermal::identify_lptn({t1, t2}, init, &rep);
    json j;
    j["collective_nrmse"] = rep.collective_nrmse;
    j["iterations"] = rep.iterations;
    j["converged"] = rep.converged;
    for (int i = 0; i < 6; ++i) j["nrmse"][thermal::node_name(i)] = rep.nrmse[i];
    j["fitted"] = {{"k_sft_rtr", fitted.k_sft_rtr},   {"k_rtr_mgt", fitted.k_rtr_mgt},
                   {"k_rtr_str", fitted.k_rtr_str},   {"k_rtr_wdg", fitted.k_rtr_wdg},
                   {"k_str_wdg", fitted.k_str_wdg},   {"k_str_col", fitted.k_str_col},
                   {"k_wdg_ewdg", fitted.k_wdg_ewdg}, {"c_sft", fitted.c[0]},
                   {"c_rtr", fitted.c[1]},            {"c_mgt", fitted.c[2]},
                   {"c_str", fitted.c[3]},            {"c_wdg", fitted.c[4]},
                   {"c_ewdg", fitted.c[5]}};
    out.write("summary.json", j.dump(2) + "\n");
    out.finalize();
    std::cout << "fit-thermal: collective NRMSE " << rep.collective_nrmse << " in " << rep.iterations
              << " iterations\n";
    return 0;
}

int cmd_check(config::PowertrainConfig cfg, OutputDir& out) {
    const plant::MotorEnvelope env{cfg.motor_limits.T_m_max, cfg.motor_limits.d_1_max,
                                   cfg.motor_limits.d_0_max, cfg.motor_limits.P_m_max_ceiling,
                                   cfg.motor_limits.omega_m_max};
    const auto rep = plant::check_performance(cfg.body, cfg.mass, cfg.drivetrain, env, cfg.performance);
    out.write("performance.json", performance_json(rep).dump(2) + "\n");
    out.finalize();
    std::cout << "check: gradeability " << (rep.gradeability.pass ? "pass" : "FAIL") << ", top speed "
              << (rep.top_speed.pass ? "pass" : "FAIL") << ", acceleration "
              << (rep.acceleration.pass ? "pass" : "FAIL") << "\n";
    return 0;
}

int run_one_optimize(config::PowertrainConfig cfg, const cycle::DriveCycle& dc, const std::string& fidelity,
                     OutputDir& out, const std::string& prefix) {
    ensure_motor_model(cfg);
    optimize::Solution sol;
    if (fidelity == "two-step") {
        sol = optimize::two_step(cfg, dc, cfg.solver);
    } else {
        auto t = optimize::transcribe(
            cfg, dc, fidelity == "simple" ? optimize::Fidelity::Simple : optimize::Fidelity::Full);
        sol = optimize::solve_transcription(t, cfg, dc, cfg.solver);
    }
    out.write(prefix + "summary.json", solution_summary(sol, dc, cfg).dump(2) + "\n");
    out.write(prefix + "trajectory.csv", trajectory_csv(sol, dc));
    out.write(prefix + "audit.json", audit_json(sol).dump(2) + "\n");
    if (sol.status != solver::SolveStatus::Optimal) {
        std::cerr << "solver status: " << solver::to_string(sol.status) << " " << sol.message << "\n";
        return 3;
    }
    const auto k = optimize::kpis(sol, dc, cfg);
    std::cout << prefix << "optimize: dEb " << sol.delta_Eb / 3.6e6 << " kWh, " << k.Eb_bar_Wh_per_km
              << " Wh/km, range " << k.range_km << " km, " << sol.iterations << " iterations\n";
    return 0;
}

int cmd_optimize(config::PowertrainConfig cfg, OutputDir& out, const std::string& fidelity) {
    const auto dc = config::build_cycle(cfg);
    const int rc = run_one_optimize(std::move(cfg), dc, fidelity, out, "");
    out.finalize();
    return rc;
}

int cmd_matrix(const config::PowertrainConfig& base, OutputDir& out, int jobs,
               const std::vector<std::string>& motors) {
    struct Combo {
        std::string motor;
        plant::TransmissionKind kind;
        int repeat;
    };
    std::vector<Combo> combos;
    for (const auto& m : motors)
        for (auto kind : {plant::TransmissionKind::FGT, plant::TransmissionKind::CVT})
            for (int rep : {1, 2}) combos.push_back({m, kind, rep});

    std::mutex io;
    std::vector<json> rows(combos.size());
    std::atomic<size_t> next{0};
    std::atomic<int> failures{0};

    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= combos.size()) return;
            const auto& c = combos[i];
            config::PowertrainConfig cfg = base;
            config::apply_motor_preset(cfg, c.motor);
            config::set_transmission(cfg, c.kind);
            cfg.cycle.repeat = c.repeat;
            const std::string name =
                c.motor + "_" + plant::to_string(c.kind) + "_x" + std::to_string(c.repeat);
            json row = {{"combo", name}};
            try {
                const auto dc = config::build_cycle(cfg);
                ensure_motor_model(cfg);
                const auto sol = optimize::two_step(cfg, dc, cfg.solver);
                row["status"] = solver::to_string(sol.status);
                if (sol.status == solver::SolveStatus::Optimal) {
                    const auto k = optimize::kpis(sol, dc, cfg);
                    row["Eb_bar_Wh_per_km"] = k.Eb_bar_Wh_per_km;
                    row["range_km"] = k.range_km;
                    row["delta_Eb_J"] = sol.delta_Eb;
                    if (c.kind == plant::TransmissionKind::FGT) row["gamma_fgt"] = sol.gamma_fgt;
                    out.write(name + "/trajectory.csv", trajectory_csv(sol, dc));
                    out.write(name + "/summary.json", solution_summary(sol, dc, cfg).dump(2) + "\n");
                } else {
                    ++failures;
                }
            } catch (const std::exception& e) {
                row["status"] = "error";
                row["error"] = e.what();
                ++failures;
            }
            {
                std::lock_guard<std::mutex> lock(io);
                std::cout << "matrix: finished " << name << "\n";
            }
            rows[i] = row;
        }
    };
    std::vector<std::thread> pool;
    for (int i = 0; i < std::max(1, jobs); ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    json summary;
    summary["results"] = rows;
    out.write("summary.json", summary.dump(2) + "\n");
    out.finalize();
    return failures.load() ? 3 : 0;
}

int cmd_simulate(config::PowertrainConfig cfg, OutputDir& out, const std::string& controls_path) {
    ensure_motor_model(cfg);
    const auto dc = config::build_cycle(cfg);
    oracle::ControlTrajectory u;
    if (controls_path.empty()) {
        u.P_brk.assign(dc.points.size(), 0.0);
        if (cfg.drivetrain.kind == plant::TransmissionKind::FGT)
            u.gamma_fgt = cfg.drivetrain.gamma_fgt;
        else
            u.gamma.assign(dc.points.size(), 0.5 * (cfg.drivetrain.gamma_min + cfg.drivetrain.gamma_max));
    } else {
        std::ifstream f(controls_path);
        if (!f) throw config::SchemaError("cannot open controls file: " + controls_path, "");
        const json j = json::parse(f);
        u.P_brk = j.at("P_brk").get<std::vector<double>>();
        if (j.contains("gamma_fgt")) u.gamma_fgt = j.at("gamma_fgt").get<double>();
        if (j.contains("gamma")) u.gamma = j.at("gamma").get<std::vector<double>>();
    }
    const auto trace = oracle::forward_simulate(dc, cfg, u, false);
    std::ostringstream os;
    os << "t,v,P_req,P_brk,P_m,omega,P_int,E_b,theta_sft,theta_rtr,theta_mgt,theta_str,theta_wdg,"
          "theta_ewdg,feasible\n";
    for (size_t k = 0; k < trace.steps.size(); ++k) {
        const auto& st = trace.steps[k];
        os << format_double(dc.points[k].t) << ',' << format_double(dc.points[k].v) << ','
           << format_double(st.P_req) << ',' << format_double(st.P_brk) << ',' << format_double(st.P_m)
           << ',' << format_double(st.omega) << ',' << format_double(st.P_int) << ','
           << format_double(st.E_b);
        for (int i = 0; i < 6; ++i) os << ',' << format_double(st.theta[i]);
        os << ',' << (st.ok() ? 1 : 0) << '\n';
    }
    out.write("trace.csv", os.str());
    json j = {{"delta_Eb_J", trace.delta_Eb},
              {"feasible", trace.feasible},
              {"first_violation", trace.first_violation}};
    out.write("summary.json", j.dump(2) + "\n");
    out.finalize();
    std::cout << "simulate: dEb " << trace.delta_Eb / 3.6e6 << " kWh, "
              << (trace.feasible ? "feasible" : "constraint violations flagged") << "\n";
    return 0;
}

int cmd_oracle(config::PowertrainConfig cfg, OutputDir& out, std::uint64_t seed) {
    ensure_motor_model(cfg);
    // short random instance with braking content
    cycle::DriveCycle dc;
    dc.dt = cfg.cycle.dt;
    Rng rng(seed);
    double v = rng.uniform(8.0, 14.0);
    for (int k = 0; k < 6; ++k) {
        dc.points.push_back({double(k) * dc.dt, v, 0.0, 0.0});
        v = std::max(2.0, v + rng.uniform(-4.0, 2.0));
    }
    dc = cycle::derive_acceleration(dc);

    const auto sol = optimize::two_step(cfg, dc, cfg.solver);
    if (sol.status != solver::SolveStatus::Optimal) {
        std::cerr << "oracle: convex solve not optimal\n";
        return 3;
    }
    oracle::DpGrids grids;
    grids.brake_fractions = {0.0, 0.25, 0.5, 0.75, 1.0};
    if (cfg.drivetrain.kind == plant::TransmissionKind::FGT) grids.gammas = {sol.gamma_fgt};
    const auto dp = oracle::dp_optimize(dc, cfg, grids);
    json j = {{"convex_delta_Eb_J", sol.delta_Eb},
              {"dp_delta_Eb_J", dp.found ? dp.delta_Eb : 0.0},
              {"dp_found", dp.found},
              {"dp_evaluated", dp.evaluated}};
    out.write("summary.json", j.dump(2) + "\n");
    out.finalize();
    std::cout << "oracle: convex " << sol.delta_Eb << " J vs dp " << dp.delta_Eb << " J over "
              << dp.evaluated << " sequences\n";
    return (dp.found && sol.delta_Eb <= dp.delta_Eb + 1e-6 * std::abs(dp.delta_Eb) + 1.0) ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Electric powertrain design and control optimization under motor thermal constraints"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out", fidelity = "two-step", controls_path;
    std::uint64_t seed = 1;
    int jobs = 2;
    double dt = 0.0;
    std::vector<std::string> motors = {"motor1", "motor2", "motor3"};

    app.add_option("--config", config_path, "config JSON path (defaults to built-in parameters)");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "seed for synthetic fixtures");
    app.add_option("--jobs", jobs, "worker threads for matrix runs");
    app.add_option("--dt", dt, "override sampling time, s");

    auto* fit_motor = app.add_subcommand("fit-motor", "generate synthetic loss maps and fit the loss model");
    auto* fit_thermal = app.add_subcommand("fit-thermal", "identify LPTN parameters from synthetic trajectories");
    auto* check = app.add_subcommand("check", "evaluate the performance requirements");
    auto* opt = app.add_subcommand("optimize", "solve one motor/transmission/cycle combination");
    opt->add_option("--fidelity", fidelity, "simple|full|two-step");
    auto* matrix = app.add_subcommand("matrix", "solve the full motor x transmission x cycle matrix");
    matrix->add_option("--motors", motors, "motor presets to sweep");
    auto* simulate = app.add_subcommand("simulate", "replay a control trajectory through the exact plant");
    simulate->add_option("--controls", controls_path, "JSON with P_brk[] and gamma/gamma_fgt");
    auto* oracle_cmd = app.add_subcommand("oracle", "compare the convex optimum against exhaustive search");

    CLI11_PARSE(app, argc, argv);

    try {
        config::PowertrainConfig cfg = load_config(config_path);
        if (dt > 0.0) cfg.cycle.dt = dt;
        if (seed != 1) {
            cfg.motor_seed = seed;
            cfg.cycle.synthetic.seed = seed;
        }
        OutputDir out{fs::path(out_dir)};
        if (*fit_motor) return cmd_fit_motor(std::move(cfg), out);
        if (*fit_thermal) return cmd_fit_thermal(std::move(cfg), out, seed);
        if (*check) return cmd_check(std::move(cfg), out);
        if (*opt) return cmd_optimize(std::move(cfg), out, fidelity);
        if (*matrix) return cmd_matrix(cfg, out, jobs, motors);
        if (*simulate) return cmd_simulate(std::move(cfg), out, controls_path);
        if (*oracle_cmd) return cmd_oracle(std::move(cfg), out, seed);
        return 0;
    } catch (const config::SchemaError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 4;
    }
}

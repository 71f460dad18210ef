// ntk-lab: command line front end for the ntklab headers.
//
// Every subcommand resolves its configuration as defaults <- --config file <- flags, runs,
// writes results (CSV or JSON) to --out or stdout, and writes a manifest holding the
// resolved configuration. Passing that manifest back through --config reruns the same job.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ntklab/ntklab.hpp"

using namespace ntklab;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Command {
    std::string name;
    CLI::App* app = nullptr;
    Json defaults = Json::object();
    Json overrides = Json::object();
    std::function<void(const Json& cfg, const std::string& format, std::ostream& out, Manifest& manifest)> run;
};

// ---------------------------------------------------------------------------------------------
// config helpers

template <class T>
T get(const Json& cfg, const char* key) {
    try {
        return cfg.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(std::string("config key '") + key + "': " + e.what());
    }
}

Json resolve(const Command& cmd, const std::string& config_path) {
    Json cfg = cmd.defaults;
    if (!config_path.empty()) {
        Json file = read_json_file(config_path);
        if (file.contains("config") && file.contains("tool")) {  // a manifest
            if (file.value("command", cmd.name) != cmd.name)
                throw ConfigError("manifest was written by '" + file.value("command", std::string()) + "', not '" +
                                  cmd.name + "'");
            file = file.at("config");
        }
        if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
        for (auto it = file.begin(); it != file.end(); ++it) {
            if (!cfg.contains(it.key())) throw ConfigError("unknown config key '" + it.key() + "' for " + cmd.name);
            cfg[it.key()] = it.value();
        }
    }
    for (auto it = cmd.overrides.begin(); it != cmd.overrides.end(); ++it) cfg[it.key()] = it.value();
    return cfg;
}

template <class T>
void flag(Command& cmd, const std::string& names, const std::string& key, const std::string& help) {
    cmd.app->add_option_function<T>(names, [&cmd, key](const T& v) { cmd.overrides[key] = v; },
                                    help + " [config: " + key + "]");
}

template <class T>
void list_flag(Command& cmd, const std::string& names, const std::string& key, const std::string& help) {
    cmd.app
        ->add_option_function<std::vector<T>>(names, [&cmd, key](const std::vector<T>& v) { cmd.overrides[key] = v; },
                                              help + " [config: " + key + "]")
        ->delimiter(',');
}

KernelSpec kernel_from(const Json& cfg) {
    KernelSpec s{parse_family(get<std::string>(cfg, "family")), get<int>(cfg, "depth"),
                 parse_domain(get<std::string>(cfg, "domain"))};
    s.validate();
    return s;
}

void add_kernel_flags(Command& cmd, const char* family = "ntk") {
    cmd.defaults["family"] = family;
    cmd.defaults["depth"] = 1;
    cmd.defaults["domain"] = "lifted";
    flag<std::string>(cmd, "--family", "family", "kernel family: ntk | rfk");
    flag<int>(cmd, "--depth", "depth", "hidden layers L");
    flag<std::string>(cmd, "--domain", "domain", "sphere (unit-norm inputs) | lifted (x -> (x,1))");
}

// Points either from a CSV (all columns are coordinates) or sampled on S^d.
void add_point_flags(Command& cmd) {
    cmd.defaults["points"] = "";
    cmd.defaults["n"] = 100;
    cmd.defaults["d"] = 3;
    cmd.defaults["seed"] = 0;
    flag<std::string>(cmd, "--points", "points", "CSV of points, one per row (default: sample on S^d)");
    flag<int>(cmd, "--n", "n", "number of sampled points");
    flag<int>(cmd, "--d", "d", "sphere dimension d (points have d+1 coordinates)");
    flag<std::uint64_t>(cmd, "--seed", "seed", "master seed");
}

Points points_from(const Json& cfg) {
    const auto path = get<std::string>(cfg, "points");
    if (path.empty()) return sample_sphere_gaussian(get<int>(cfg, "d"), get<int>(cfg, "n"), get<std::uint64_t>(cfg, "seed"));
    // reuse the dataset reader with a dummy label column appended
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open points file '" + path + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<double> row;
        const auto cells = detail::split_commas(line);
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto v = detail::parse_number(cells[c]);
            if (!v) {
                if (line_no == 1 && rows.empty()) goto next_line;
                throw ParseError("points: non-numeric cell", line_no, c + 1);
            }
            row.push_back(*v);
        }
        if (!rows.empty() && row.size() != rows.front().size()) throw ParseError("points: ragged row", line_no, 1);
        rows.push_back(std::move(row));
    next_line:;
    }
    if (rows.empty()) throw EmptyDataset("points file '" + path + "' has no rows");
    Points P(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) P(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return P;
}

std::vector<double> parse_vector(const std::string& s) {
    std::vector<double> out;
    for (const auto& cell : detail::split_commas(s)) {
        const auto v = detail::parse_number(cell);
        if (!v) throw ConfigError("not a number: '" + cell + "'");
        out.push_back(*v);
    }
    return out;
}

Json fit_json(const SlopeFit& f) {
    return Json{{"slope", f.slope},       {"intercept", f.intercept}, {"r_squared", f.r_squared},
                {"slope_std_error", f.slope_std_error}, {"i_min", f.i_min}, {"i_max", f.i_max},
                {"points", f.points}};
}

void require_format(const std::string& format) {
    if (format != "csv" && format != "json") throw ConfigError("--format must be csv or json");
}

// ---------------------------------------------------------------------------------------------
// subcommands

void setup_kernel_eval(Command& cmd) {
    add_kernel_flags(cmd);
    cmd.defaults["x"] = "0,0,1";
    cmd.defaults["y"] = "0,1,0";
    flag<std::string>(cmd, "--x", "x", "first point, comma separated");
    flag<std::string>(cmd, "--y", "y", "second point, comma separated");
    cmd.app->footer("CSV columns: family,depth,domain,value");
    cmd.run = [](const Json& cfg, const std::string& format, std::ostream& out, Manifest&) {
        const KernelSpec spec = kernel_from(cfg);
        const auto xv = parse_vector(get<std::string>(cfg, "x")), yv = parse_vector(get<std::string>(cfg, "y"));
        const Eigen::Map<const Eigen::VectorXd> x(xv.data(), static_cast<Eigen::Index>(xv.size()));
        const Eigen::Map<const Eigen::VectorXd> y(yv.data(), static_cast<Eigen::Index>(yv.size()));
        const double v = kernel_eval(spec, x, y);
        if (format == "json") {
            out << Json{{"family", to_string(spec.family)}, {"depth", spec.depth}, {"domain", to_string(spec.domain)},
                        {"value", v}}.dump(2) << '\n';
        } else {
            CsvWriter w(out, {"family", "depth", "domain", "value"});
            w.row({to_string(spec.family), std::to_string(spec.depth), to_string(spec.domain), format_double(v)});
        }
    };
}

void setup_gram(Command& cmd) {
    add_kernel_flags(cmd);
    add_point_flags(cmd);
    cmd.app->footer("CSV columns: i,j,value (row-major, full matrix)");
    cmd.run = [](const Json& cfg, const std::string& format, std::ostream& out, Manifest& m) {
        const Points X = points_from(cfg);
        m.seeds = {get<std::uint64_t>(cfg, "seed")};
        const Eigen::MatrixXd G = gram(kernel_from(cfg), X);
        if (format == "json") {
            Json rows = Json::array();
            for (Eigen::Index i = 0; i < G.rows(); ++i) {
                std::vector<double> r(G.row(i).data(), G.row(i).data() + 0);
                for (Eigen::Index j = 0; j < G.cols(); ++j) r.push_back(G(i, j));
                rows.push_back(r);
            }
            out << Json{{"n", G.rows()}, {"gram", rows}}.dump() << '\n';
        } else {
            CsvWriter w(out, {"i", "j", "value"});
            for (Eigen::Index i = 0; i < G.rows(); ++i)
                for (Eigen::Index j = 0; j < G.cols(); ++j)
                    w.row({std::to_string(i), std::to_string(j), format_double(G(i, j))});
        }
    };
}

void setup_spectrum(Command& cmd) {
    add_kernel_flags(cmd);
    add_point_flags(cmd);
    cmd.defaults["n"] = 500;
    cmd.defaults["fit_min"] = 0;
    cmd.defaults["fit_max"] = 0;
    flag<int>(cmd, "--fit-min", "fit_min", "first index of the slope window (0: max(5, 0.02 n))");
    flag<int>(cmd, "--fit-max", "fit_max", "last index of the slope window (0: 0.5 n)");
    cmd.app->footer("CSV columns: index,eigenvalue (1-based, descending). JSON adds the log-log fit.");
    cmd.run = [](const Json& cfg, const std::string& format, std::ostream& out, Manifest& m) {
        const Points X = points_from(cfg);
        m.seeds = {get<std::uint64_t>(cfg, "seed")};
        const EigenSystem e = eig_sym(gram(kernel_from(cfg), X));
        auto [lo, hi] = default_fit_window(e.size());
        if (get<int>(cfg, "fit_min") > 0) lo = get<int>(cfg, "fit_min");
        if (get<int>(cfg, "fit_max") > 0) hi = get<int>(cfg, "fit_max");
        if (format == "json") {
            Json j{{"n", e.size()},
                   {"eigenvalues", std::vector<double>(e.values.data(), e.values.data() + e.size())},
                   {"negative_count", e.negative_count}};
            try {
                j["fit"] = fit_json(decay_slope(e.floored(), lo, hi));
            } catch (const RangeError& err) {
                j["fit"] = nullptr;
                j["fit_error"] = err.what();
            }
            out << j.dump(2) << '\n';
        } else {
            CsvWriter w(out, {"index", "eigenvalue"});
            for (Eigen::Index i = 0; i < e.size(); ++i) w.row({std::to_string(i + 1), format_double(e.values(i))});
        }
    };
}

void setup_gp_sample(Command& cmd) {
    add_kernel_flags(cmd, "rfk");
    add_point_flags(cmd);
    cmd.defaults["n"] = 50;
    cmd.defaults["draws"] = 1;
    flag<int>(cmd, "--draws", "draws", "number of independent draws");
    cmd.app->footer("CSV columns: draw,index,value. Draw k uses seed derive(seed, k).");
    cmd.run = [](const Json& cfg, const std::string& format, std::ostream& out, Manifest& m) {
        const Points X = points_from(cfg);
        const auto seed = get<std::uint64_t>(cfg, "seed");
        const int draws = get<int>(cfg, "draws");
        if (draws < 1) throw ConfigError("draws must be >= 1");
        const GpSampler sampler(kernel_from(cfg), X);
        Json jd = Json::array();
        std::unique_ptr<CsvWriter> w;
        if (format == "csv") w = std::make_unique<CsvWriter>(out, std::vector<std::string>{"draw", "index", "value"});
        for (int k = 0; k < draws; ++k) {
            const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(k));
            m.seeds.push_back(s);
            const Eigen::VectorXd v = sampler.draw_values(s);
            if (w)
                for (Eigen::Index i = 0; i < v.size(); ++i)
                    w->row({std::to_string(k), std::to_string(i), format_double(v(i))});
            else
                jd.push_back(std::vector<double>(v.data(), v.data() + v.size()));
        }
        if (!w) out << Json{{"jitter", sampler.jitter()}, {"draws", jd}}.dump() << '\n';
    };
}

void setup_kgf(Command& cmd) {
    add_kernel_flags(cmd);
    cmd.defaults["d"] = 3;
    cmd.defaults["n"] = 100;
    cmd.defaults["n_test"] = 2000;
    cmd.defaults["sigma"] = 0.2;
    cmd.defaults["seed"] = 0;
    cmd.defaults["init"] = "zero";
    cmd.defaults["t_min"] = 0.1;
    cmd.defaults["t_max"] = 1e6;
    cmd.defaults["t_points"] = 60;
    flag<int>(cmd, "--d", "d", "sphere dimension d");
    flag<int>(cmd, "--n", "n", "training points");
    flag<int>(cmd, "--n-test", "n_test", "test points for the risk estimate");
    flag<double>(cmd, "--sigma", "sigma", "label noise standard deviation");
    flag<std::uint64_t>(cmd, "--seed", "seed", "master seed");
    flag<std::string>(cmd, "--init", "init", "initial function: zero | gp (RFK draw on train and test jointly)");
    flag<double>(cmd, "--t-min", "t_min", "first time of the log grid");
    flag<double>(cmd, "--t-max", "t_max", "last time of the log grid");
    flag<int>(cmd, "--t-points", "t_points", "grid size");
    cmd.app->footer("CSV columns: t,test_risk,train_loss,is_best. Risk is against the noiseless target.");
    cmd.run = [](const Json& cfg, const std::string& format, std::ostream& out, Manifest& m) {
        const int d = get<int>(cfg, "d"), n = get<int>(cfg, "n"), nt = get<int>(cfg, "n_test");
        const auto seed = get<std::uint64_t>(cfg, "seed");
        const std::uint64_t sx = derive_seed(seed, 1), sy = derive_seed(seed, 2), st = derive_seed(seed, 3),
                            sg = derive_seed(seed, 4);
        m.seeds = {seed, sx, sy, st, sg};
        const Points X = sample_sphere_gaussian(d, n, sx);
        const Eigen::VectorXd Y = synth_target(X, get<double>(cfg, "sigma"), sy);
        const Points T = sample_sphere_gaussian(d, nt, st);
        const Eigen::VectorXd fT = synth_regression_values(T);
        Eigen::VectorXd f0X = Eigen::VectorXd::Zero(n);
        PointFunction f0 = zero_function();
        const auto init = get<std::string>(cfg, "init");
        if (init == "gp") {
            Points both(n + nt, X.cols());
            both << X, T;
            const Eigen::VectorXd v = sample_gp({KernelFamily::RFK, get<int>(cfg, "depth"), KernelDomain::Lifted}, both, sg).values;
            f0X = v.head(n);
            f0 = TabulatedFunction(both, v);
        } else if (init != "zero") {
            throw ConfigError("init must be zero or gp");
        }
        const KgfPredictor pred(kernel_from(cfg), X, Y, f0X, f0);
        const auto grid = log_time_grid(get<double>(cfg, "t_min"), get<double>(cfg, "t_max"), get<int>(cfg, "t_points"));
        const EarlyStopResult es = early_stop(pred, grid, T, fT);
        std::vector<double> train;
        for (double t : grid) train.push_back(mse_loss(pred.predict_train(t), Y));
        if (format == "json") {
            out << Json{{"t", grid}, {"test_risk", es.risk_curve}, {"train_loss", train}, {"t_best", es.t_best},
                        {"best_risk", es.risk_curve[es.best_index]}}.dump(2) << '\n';
        } else {
            CsvWriter w(out, {"t", "test_risk", "train_loss", "is_best"});
            for (std::size_t i = 0; i < grid.size(); ++i)
                w.row({format_double(grid[i]), format_double(es.risk_curve[i]), format_double(train[i]),
                       i == es.best_index ? "1" : "0"});
        }
    };
}

void setup_train(Command& cmd) {
    cmd.defaults["d"] = 5;
    cmd.defaults["depth"] = 1;
    cmd.defaults["n"] = 64;
    cmd.defaults["width"] = 1280;
    cmd.defaults["init_mode"] = "mirrored";
    cmd.defaults["output_scale"] = "literal";
    cmd.defaults["lr"] = 0.6;
    cmd.defaults["steps"] = 640;
    cmd.defaults["record_every"] = 10;
    cmd.defaults["sigma"] = 0.2;
    cmd.defaults["n_test"] = 2000;
    cmd.defaults["seed"] = 0;
    cmd.defaults["checkpoint"] = "";
    flag<int>(cmd, "--d", "d", "sphere dimension d");
    flag<int>(cmd, "--depth", "depth", "hidden layers L");
    flag<int>(cmd, "--n", "n", "training points");
    flag<int>(cmd, "--width", "width", "hidden width m");
    flag<std::string>(cmd, "--init-mode", "init_mode", "standard | mirrored");
    flag<std::string>(cmd, "--output-scale", "output_scale", "literal | fan_in (same function of theta)");
    flag<double>(cmd, "--lr", "lr", "learning rate");
    flag<int>(cmd, "--steps", "steps", "gradient steps (full batch)");
    flag<int>(cmd, "--record-every", "record_every", "record interval in steps");
    flag<double>(cmd, "--sigma", "sigma", "label noise standard deviation");
    flag<int>(cmd, "--n-test", "n_test", "test points");
    flag<std::uint64_t>(cmd, "--seed", "seed", "master seed");
    flag<std::string>(cmd, "--checkpoint", "checkpoint", "write final parameters here");
    cmd.app->footer("CSV columns: step,time,train_loss,test_risk. time = step * lr.");
    cmd.run = [](const Json& cfg, const std::string& format, std::ostream& out, Manifest& m) {
        const int d = get<int>(cfg, "d"), n = get<int>(cfg, "n");
        const auto seed = get<std::uint64_t>(cfg, "seed");
        const CellSeeds s = cell_seeds(seed, n);
        m.seeds = {seed, s.train_points, s.train_noise, s.test_points, s.network};
        const Points X = sample_sphere_gaussian(d, n, s.train_points);
        const Eigen::VectorXd Y = synth_target(X, get<double>(cfg, "sigma"), s.train_noise);
        const Points T = sample_sphere_gaussian(d, get<int>(cfg, "n_test"), s.test_points);
        const Eigen::VectorXd fT = synth_regression_values(T);
        NetworkConfig net;
        net.input_dim = d + 1;
        net.depth = get<int>(cfg, "depth");
        net.width = get<int>(cfg, "width");
        net.init_mode = parse_init_mode(get<std::string>(cfg, "init_mode"));
        net.output_scale = parse_output_scale(get<std::string>(cfg, "output_scale"));
        net.seed = s.network;
        NetworkParams params = init_params(net);
        TrainOptions opt;
        opt.lr = get<double>(cfg, "lr");
        opt.steps = get<int>(cfg, "steps");
        opt.record_every = get<int>(cfg, "record_every");
        std::vector<std::pair<int, double>> risks;
        BatchEvaluator test_eval(T);
        opt.observer = [&](int step, const NetworkParams& p) {
            risks.emplace_back(step, risk_from_errors(test_eval(p) - fT).value);
        };
        const TrainTrajectory traj = train_gd(params, X, Y, opt);
        if (const auto path = get<std::string>(cfg, "checkpoint"); !path.empty()) {
            save_checkpoint(path, params, opt.steps);
            m.outputs.push_back(path);
        }
        if (format == "json") {
            Json rows = Json::array();
            for (const auto& [step, r] : risks)
                rows.push_back({{"step", step}, {"time", traj.time_of(step)}, {"train_loss", traj.losses[step]},
                                {"test_risk", r}});
            out << Json{{"records", rows}, {"losses", traj.losses}}.dump(2) << '\n';
        } else {
            CsvWriter w(out, {"step", "time", "train_loss", "test_risk"});
            for (const auto& [step, r] : risks)
                w.row({std::to_string(step), format_double(traj.time_of(step)),
                       format_double(traj.losses[static_cast<std::size_t>(step)]), format_double(r)});
        }
    };
}

void setup_curve(Command& cmd) {
    const CurveConfig c;
    cmd.defaults["d"] = c.d;
    cmd.defaults["depth"] = c.depth;
    cmd.defaults["n_grid"] = c.n_grid;
    cmd.defaults["width_factor"] = c.width_factor;
    cmd.defaults["epochs_factor"] = c.epochs_factor;
    cmd.defaults["lr"] = c.lr;
    cmd.defaults["sigma"] = c.sigma;
    cmd.defaults["seeds"] = 10;
    cmd.defaults["seed"] = 0;
    cmd.defaults["modes"] = std::vector<std::string>{"standard", "mirrored"};
    cmd.defaults["n_test"] = c.n_test;
    cmd.defaults["eval_every"] = c.eval_every;
    cmd.defaults["output_scale"] = "literal";
    flag<int>(cmd, "--d", "d", "sphere dimension d");
    flag<int>(cmd, "--depth", "depth", "hidden layers L");
    list_flag<int>(cmd, "--n-grid", "n_grid", "sample sizes, strictly increasing, comma separated");
    flag<double>(cmd, "--width-factor", "width_factor", "m = factor * n");
    flag<double>(cmd, "--epochs-factor", "epochs_factor", "steps = factor * n");
    flag<double>(cmd, "--lr", "lr", "learning rate");
    flag<double>(cmd, "--sigma", "sigma", "label noise standard deviation");
    flag<int>(cmd, "--seeds", "seeds", "number of seeds per n (seed k = derive(seed, k))");
    flag<std::uint64_t>(cmd, "--seed", "seed", "master seed");
    list_flag<std::string>(cmd, "--modes", "modes", "init modes: standard,mirrored");
    flag<int>(cmd, "--n-test", "n_test", "test points per cell");
    flag<int>(cmd, "--eval-every", "eval_every", "test-risk evaluation interval in steps");
    cmd.app->footer(
        "CSV columns: n,seed,mode,width,steps,best_step,best_time,risk,risk_se,initial_risk,final_train_loss\n"
        "risk is the early-stopped test excess risk (minimum over evaluated steps, oracle stopping).\n"
        "JSON adds one log-log fit of risk against n per mode.");
    cmd.run = [](const Json& cfg, const std::string& format, std::ostream& out, Manifest& m) {
        CurveConfig c;
        c.d = get<int>(cfg, "d");
        c.depth = get<int>(cfg, "depth");
        c.n_grid = get<std::vector<int>>(cfg, "n_grid");
        c.width_factor = get<double>(cfg, "width_factor");
        c.epochs_factor = get<double>(cfg, "epochs_factor");
        c.lr = get<double>(cfg, "lr");
        c.sigma = get<double>(cfg, "sigma");
        const int n_seeds = get<int>(cfg, "seeds");
        if (n_seeds < 1) throw ConfigError("seeds must be >= 1");
        c.seeds.clear();
        for (int k = 0; k < n_seeds; ++k)
            c.seeds.push_back(derive_seed(get<std::uint64_t>(cfg, "seed"), static_cast<std::uint64_t>(k)));
        c.modes.clear();
        for (const auto& s : get<std::vector<std::string>>(cfg, "modes")) c.modes.push_back(parse_init_mode(s));
        c.n_test = get<int>(cfg, "n_test");
        c.eval_every = get<int>(cfg, "eval_every");
        c.output_scale = parse_output_scale(get<std::string>(cfg, "output_scale"));
        m.seeds = c.seeds;
        CurveResult r = run_curve(c);
        std::sort(r.rows.begin(), r.rows.end(), [](const CurveRow& a, const CurveRow& b) {
            return std::tie(a.n, a.mode, a.seed) < std::tie(b.n, b.mode, b.seed);
        });
        if (format == "json") {
            Json rows = Json::array(), fits = Json::object();
            for (const auto& x : r.rows)
                rows.push_back({{"n", x.n}, {"seed", x.seed}, {"mode", to_string(x.mode)}, {"width", x.width},
                                {"steps", x.steps}, {"best_step", x.best_step}, {"best_time", x.best_time},
                                {"risk", x.risk}, {"risk_se", x.risk_se}, {"initial_risk", x.initial_risk},
                                {"final_train_loss", x.final_train_loss}});
            for (const auto& f : r.fits) fits[to_string(f.mode)] = fit_json(f.fit);
            out << Json{{"rows", rows}, {"fits", fits}, {"early_stopping", "minimum held-out risk over evaluated steps"},
                        {"time_map", "t = step * lr"}}.dump(2) << '\n';
        } else {
            CsvWriter w(out, {"n", "seed", "mode", "width", "steps", "best_step", "best_time", "risk", "risk_se",
                              "initial_risk", "final_train_loss"});
            for (const auto& x : r.rows)
                w.row({std::to_string(x.n), std::to_string(x.seed), to_string(x.mode), std::to_string(x.width),
                       std::to_string(x.steps), std::to_string(x.best_step), format_double(x.best_time),
                       format_double(x.risk), format_double(x.risk_se), format_double(x.initial_risk),
                       format_double(x.final_train_loss)});
            for (const auto& f : r.fits)
                std::cerr << "fit " << to_string(f.mode) << ": slope " << f.fit.slope << " +- " << f.fit.slope_std_error
                          << '\n';
        }
    };
}

Json report_json(const SmoothnessReport& r) {
    Json j{{"dataset", r.dataset},
           {"n", r.n},
           {"dim", r.dim},
           {"alpha_hat", r.degenerate ? Json(nullptr) : Json(r.alpha_hat)},
           {"d_lambda", r.d_lambda},
           {"d_lambda_mode", to_string(r.d_lambda_mode)},
           {"d_lambda_theoretical", r.d_lambda_theoretical},
           {"d_lambda_fitted", r.d_lambda_fitted ? Json(*r.d_lambda_fitted) : Json(nullptr)},
           {"degenerate", r.degenerate},
           {"note", r.note},
           {"fit", r.fit ? fit_json(*r.fit) : Json(nullptr)},
           {"tail_sums", r.tail_sums}};
    return j;
}

void setup_smoothness(Command& cmd) {
    cmd.defaults["data"] = std::vector<std::string>{};
    cmd.defaults["label_column"] = -1;
    cmd.defaults["max_rows"] = 3000;
    cmd.defaults["normalize"] = "unit_sphere";
    cmd.defaults["feature_scale"] = 1.0 / 255.0;
    cmd.defaults["label_encoding"] = "class_index";
    cmd.defaults["positive_class"] = 0.0;
    cmd.defaults["seed"] = 0;
    cmd.defaults["family"] = "ntk";
    cmd.defaults["depth"] = 1;
    cmd.defaults["domain"] = "lifted";
    cmd.defaults["d_lambda_mode"] = "theoretical";
    cmd.defaults["fit_min"] = 1;
    cmd.defaults["fit_max"] = 2700;
    cmd.defaults["intrinsic_dim"] = 0;
    list_flag<std::string>(cmd, "--data", "data", "dataset CSV files (label in --label-column)");
    flag<int>(cmd, "--label-column", "label_column", "label column, negative counts from the end");
    flag<int>(cmd, "--max-rows", "max_rows", "seeded random subset size (0 keeps all)");
    flag<std::string>(cmd, "--normalize", "normalize", "none | unit_sphere");
    flag<double>(cmd, "--feature-scale", "feature_scale", "multiplier applied to features before normalizing");
    flag<std::string>(cmd, "--label-encoding", "label_encoding", "class_index | one_vs_rest");
    flag<double>(cmd, "--positive-class", "positive_class", "positive label for one_vs_rest");
    flag<std::uint64_t>(cmd, "--seed", "seed", "subset seed");
    flag<std::string>(cmd, "--family", "family", "kernel family: ntk | rfk");
    flag<int>(cmd, "--depth", "depth", "hidden layers L");
    flag<std::string>(cmd, "--domain", "domain", "sphere | lifted");
    flag<std::string>(cmd, "--d-lambda-mode", "d_lambda_mode", "theoretical | fitted");
    flag<int>(cmd, "--fit-min", "fit_min", "first tail-sum index of the fit");
    flag<int>(cmd, "--fit-max", "fit_max", "last tail-sum index of the fit");
    flag<int>(cmd, "--intrinsic-dim", "intrinsic_dim", "d used by the theoretical rate (0: from data)");
    cmd.app->footer(
        "CSV columns: dataset,n,dim,alpha_hat,d_lambda,d_lambda_mode,d_lambda_theoretical,d_lambda_fitted,"
        "alpha_hat_fitted,slope,r_squared,fit_min,fit_max,degenerate,error\n"
        "With --out FILE the tail-sum curves go to FILE.tails.csv (dataset,index,tail_sum).");
    cmd.run = [](const Json& cfg, const std::string& format, std::ostream& out, Manifest& m) {
        SmoothnessRunConfig c;
        c.paths = get<std::vector<std::string>>(cfg, "data");
        if (c.paths.empty()) throw ConfigError("smoothness: no --data files given");
        c.csv.label_column = get<int>(cfg, "label_column");
        c.csv.max_rows = get<int>(cfg, "max_rows");
        const auto norm = get<std::string>(cfg, "normalize");
        if (norm != "none" && norm != "unit_sphere") throw ConfigError("normalize must be none or unit_sphere");
        c.csv.normalize = norm == "none" ? RowNormalization::None : RowNormalization::UnitSphere;
        c.csv.feature_scale = get<double>(cfg, "feature_scale");
        const auto enc = get<std::string>(cfg, "label_encoding");
        if (enc != "class_index" && enc != "one_vs_rest") throw ConfigError("label_encoding must be class_index or one_vs_rest");
        c.csv.label_encoding = enc == "class_index" ? LabelEncoding::ClassIndex : LabelEncoding::OneVsRest;
        c.csv.positive_class = get<double>(cfg, "positive_class");
        c.csv.seed = get<std::uint64_t>(cfg, "seed");
        m.seeds = {c.csv.seed};
        c.options.kernel = kernel_from(cfg);
        const auto mode = get<std::string>(cfg, "d_lambda_mode");
        if (mode != "theoretical" && mode != "fitted") throw ConfigError("d_lambda_mode must be theoretical or fitted");
        c.options.d_lambda_mode = mode == "fitted" ? DecayMode::Fitted : DecayMode::Theoretical;
        c.options.fit_min_index = get<int>(cfg, "fit_min");
        c.options.fit_max_index = get<int>(cfg, "fit_max");
        c.options.intrinsic_dim = get<int>(cfg, "intrinsic_dim");
        const auto entries = run_smoothness(c);
        bool any_ok = false;
        if (format == "json") {
            Json arr = Json::array();
            for (const auto& e : entries) {
                Json j{{"path", e.path}, {"error", e.error}};
                if (e.report) j["report"] = report_json(*e.report);
                if (e.report_fitted) j["report_other_d_lambda"] = report_json(*e.report_fitted);
                any_ok = any_ok || e.report.has_value();
                arr.push_back(j);
            }
            out << Json{{"label_encoding", enc}, {"results", arr}}.dump(2) << '\n';
        } else {
            CsvWriter w(out, {"dataset", "n", "dim", "alpha_hat", "d_lambda", "d_lambda_mode", "d_lambda_theoretical",
                              "d_lambda_fitted", "alpha_hat_fitted", "slope", "r_squared", "fit_min", "fit_max",
                              "degenerate", "error"});
            for (const auto& e : entries) {
                if (!e.report) {
                    w.row({e.path, "", "", "", "", "", "", "", "", "", "", "", "", "", e.error});
                    continue;
                }
                any_ok = true;
                const auto& r = *e.report;
                const std::string alpha_other =
                    e.report_fitted && !e.report_fitted->degenerate ? format_double(e.report_fitted->alpha_hat) : "";
                w.row({r.dataset, std::to_string(r.n), std::to_string(r.dim),
                       r.degenerate ? "" : format_double(r.alpha_hat), format_double(r.d_lambda),
                       to_string(r.d_lambda_mode), format_double(r.d_lambda_theoretical),
                       r.d_lambda_fitted ? format_double(*r.d_lambda_fitted) : "", alpha_other,
                       r.fit ? format_double(r.fit->slope) : "", r.fit ? format_double(r.fit->r_squared) : "",
                       r.fit ? std::to_string(r.fit->i_min) : "", r.fit ? std::to_string(r.fit->i_max) : "",
                       r.degenerate ? "1" : "0", e.error});
            }
        }
        if (!cfg.value("tails_path", std::string()).empty()) {
            std::ofstream tails(cfg.at("tails_path").get<std::string>());
            CsvWriter w(tails, {"dataset", "index", "tail_sum"});
            for (const auto& e : entries)
                if (e.report)
                    for (std::size_t i = 0; i < e.report->tail_sums.size(); ++i)
                        w.row({e.report->dataset, std::to_string(i + 1), format_double(e.report->tail_sums[i])});
            m.outputs.push_back(cfg.at("tails_path").get<std::string>());
        }
        if (!any_ok) throw ConfigError("smoothness: every dataset failed");
    };
}

void setup_thm(Command& cmd) {
    const ThmConfig c;
    cmd.defaults["d_values"] = c.d_values;
    cmd.defaults["s_factors"] = c.s_factors;
    cmd.defaults["trials"] = c.trials;
    cmd.defaults["N"] = c.N;
    cmd.defaults["seed"] = 0;
    cmd.defaults["boundary_rerun_N"] = c.boundary_rerun_N;
    list_flag<int>(cmd, "--d", "d_values", "sphere dimensions, comma separated");
    list_flag<double>(cmd, "--s-factors", "s_factors", "smoothness as multiples of 3/(d+1)");
    flag<int>(cmd, "--trials", "trials", "trajectories per cell (>= 32)");
    flag<int>(cmd, "--N", "N", "series length (>= 100000)");
    flag<std::uint64_t>(cmd, "--seed", "seed", "master seed");
    flag<int>(cmd, "--boundary-rerun-N", "boundary_rerun_N", "length of the single boundary rerun (0 disables)");
    cmd.app->footer(
        "CSV columns: d,s,s_factor,s_critical,series_exponent,predicted,verdict,agrees,decay_excess,"
        "decay_excess_se,median_tail_ratio,trials,rerun");
    cmd.run = [](const Json& cfg, const std::string& format, std::ostream& out, Manifest& m) {
        ThmConfig c;
        c.d_values = get<std::vector<int>>(cfg, "d_values");
        c.s_factors = get<std::vector<double>>(cfg, "s_factors");
        c.trials = get<int>(cfg, "trials");
        c.N = get<int>(cfg, "N");
        c.seed = get<std::uint64_t>(cfg, "seed");
        c.boundary_rerun_N = get<int>(cfg, "boundary_rerun_N");
        m.seeds = {c.seed};
        const auto rows = run_thm_smoothness(c);
        if (format == "json") {
            Json arr = Json::array();
            for (const auto& r : rows)
                arr.push_back({{"d", r.d}, {"s", r.s}, {"s_factor", r.s_factor}, {"s_critical", r.s_critical},
                               {"series_exponent", r.series_exponent}, {"predicted", to_string(r.predicted)},
                               {"verdict", to_string(r.report.verdict)}, {"agrees", r.agrees},
                               {"decay_excess", r.report.decay_excess},
                               {"decay_excess_se", r.report.decay_excess_std_error},
                               {"median_tail_ratio", r.report.median_tail_ratio}, {"trials", r.report.trials},
                               {"rerun", r.rerun}});
            out << Json{{"rows", arr}}.dump(2) << '\n';
        } else {
            CsvWriter w(out, {"d", "s", "s_factor", "s_critical", "series_exponent", "predicted", "verdict", "agrees",
                              "decay_excess", "decay_excess_se", "median_tail_ratio", "trials", "rerun"});
            for (const auto& r : rows)
                w.row({std::to_string(r.d), format_double(r.s), format_double(r.s_factor), format_double(r.s_critical),
                       format_double(r.series_exponent), to_string(r.predicted), to_string(r.report.verdict),
                       r.agrees ? "1" : "0", format_double(r.report.decay_excess),
                       format_double(r.report.decay_excess_std_error), format_double(r.report.median_tail_ratio),
                       std::to_string(r.report.trials), r.rerun ? "1" : "0"});
        }
    };
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ntk-lab: NTK / kernel gradient flow experiments for wide ReLU networks"};
    app.require_subcommand(1);
    app.footer("Exit codes: 0 success, 2 configuration error, 3 numerical failure.\n"
               "NTKLAB_THREADS caps worker threads.");
    std::string config_path, out_path, format = "csv";

    std::vector<std::unique_ptr<Command>> commands;
    const std::vector<std::pair<std::string, std::pair<std::string, void (*)(Command&)>>> table{
        {"kernel-eval", {"evaluate one kernel value", setup_kernel_eval}},
        {"gram", {"Gram matrix of a point set", setup_gram}},
        {"spectrum", {"Gram eigenvalues and their log-log decay slope", setup_spectrum}},
        {"gp-sample", {"draws of the infinite-width initial function", setup_gp_sample}},
        {"kgf", {"kernel gradient flow risk curve on synthetic data", setup_kgf}},
        {"train", {"train one network with full-batch gradient descent", setup_train}},
        {"curve", {"learning curves under standard and mirrored initialization", setup_curve}},
        {"smoothness", {"relative smoothness of dataset labels", setup_smoothness}},
        {"thm-smoothness", {"convergence verdicts for the GP interpolation norm", setup_thm}},
    };
    for (const auto& [name, entry] : table) {
        auto cmd = std::make_unique<Command>();
        cmd->name = name;
        cmd->app = app.add_subcommand(name, entry.first);
        cmd->app->add_option("--config", config_path, "JSON config or a manifest from an earlier run");
        cmd->app->add_option("--out", out_path, "output file (default stdout); manifest goes to <out>.manifest.json");
        cmd->app->add_option("--format", format, "csv | json")->check(CLI::IsMember({"csv", "json"}));
        entry.second(*cmd);
        commands.push_back(std::move(cmd));
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        require_format(format);
        for (auto& cmd : commands) {
            if (!cmd->app->parsed()) continue;
            Json cfg = resolve(*cmd, config_path);
            if (cmd->name == "smoothness" && !out_path.empty()) cfg["tails_path"] = out_path + ".tails.csv";
            Manifest manifest;
            manifest.command = cmd->name;
            manifest.started_at = utc_timestamp();
            const auto t0 = std::chrono::steady_clock::now();
            std::ostringstream buffer;
            cmd->run(cfg, format, buffer, manifest);
            cfg.erase("tails_path");
            manifest.config = cfg;
            manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            if (out_path.empty()) {
                std::cout << buffer.str();
                std::cerr << manifest.to_json().dump() << '\n';
            } else {
                write_text(out_path, buffer.str());
                manifest.outputs.insert(manifest.outputs.begin(), out_path);
                write_text(out_path + ".manifest.json", manifest.to_json().dump(2) + "\n");
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "ntk-lab: configuration error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "ntk-lab: numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const Json::exception& e) {
        std::cerr << "ntk-lab: configuration error: " << e.what() << '\n';
        return kExitConfig;
    }
    return 0;
}

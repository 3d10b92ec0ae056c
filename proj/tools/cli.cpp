#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "robust_ai/data_model.hpp"
#include "robust_ai/error.hpp"
#include "robust_ai/estimation.hpp"
#include "robust_ai/harness.hpp"
#include "robust_ai/random.hpp"

namespace robust_ai::cli {

namespace {

using nlohmann::json;

int exit_code(ErrorCategory category) {
    switch (category) {
    case ErrorCategory::Config: return kExitConfig;
    case ErrorCategory::Data: return kExitData;
    case ErrorCategory::Io: return kExitData;
    case ErrorCategory::Numeric: return kExitNumeric;
    case ErrorCategory::MissingLabels: return kExitMissingLabels;
    }
    return kExitConfig;
}

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// Options shared by plan and tune.
struct PlanOptions {
    std::string data;
    std::size_t budget = 0;
    std::size_t burn_in = 0;
    std::string path = "geometric";
    std::string constraint = "none";
    double c = 0.0;
    bool cv = false;
    std::vector<double> c_grid;
    std::size_t folds = 5;
    std::vector<std::string> c_region;
    int tree_depth = 3;
    double rho_step = 0.01;
    std::uint64_t seed = 0;
    std::string initial = "prop_ehat";
    std::string error = "auto";
    std::size_t k = 0;
    std::size_t bins = 10;
    std::string estimand = "mean";
    std::size_t coord = 0;
    double floor = kDefaultFloor;
    std::string out;
    std::string trace;
};

void add_plan_options(CLI::App* cmd, PlanOptions& o, bool full) {
    cmd->add_option("--data", o.data, "CSV with columns x*, f, y (and optional conf, ehat2)")->required();
    cmd->add_option("--budget", o.budget, "total label budget n_b")->required();
    cmd->add_option("--burn-in", o.burn_in, "uniformly labeled burn-in size");
    cmd->add_option("--path", o.path, "linear | geometric | hellinger");
    cmd->add_option("--rho-step", o.rho_step, "grid step for rho");
    cmd->add_option("--seed", o.seed, "random seed");
    cmd->add_option("--initial", o.initial, "uniform | prop_uncertainty | prop_ehat | prop_one_minus_conf");
    cmd->add_option("--error", o.error, "auto | knn | binned | external | analytic");
    cmd->add_option("--k", o.k, "neighbours for the knn error model (0 = default)");
    cmd->add_option("--bins", o.bins, "bins for the binned error model");
    cmd->add_option("--estimand", o.estimand, "mean | linreg | logreg");
    cmd->add_option("--coord", o.coord, "coordinate of interest");
    cmd->add_option("--floor", o.floor, "smallest labeling probability");
    cmd->add_option("--c-grid", o.c_grid, "candidate radii")->delimiter(',');
    cmd->add_option("--folds", o.folds, "cross-validation folds");
    cmd->add_option("--constraint", o.constraint, "none | l2 | l1 | rel-l1 | rel-l2 | structured");
    if (!full) return;
    cmd->add_option("--c", o.c, "radius of the misspecification set");
    cmd->add_flag("--cv", o.cv, "choose the radius by cross-validation on the burn-in");
    cmd->add_option("--c-region", o.c_region, "structured radii as region:radius")->delimiter(',');
    cmd->add_option("--tree-depth", o.tree_depth, "depth of the region tree");
    cmd->add_option("--out", o.out, "plan CSV to write")->required();
    cmd->add_option("--trace", o.trace, "optional CSV of the rho objective trace");
}

ExperimentConfig config_from(const PlanOptions& o, const Dataset& data) {
    ExperimentConfig cfg;
    cfg.dataset.csv = o.data;
    cfg.estimand.kind = parse_estimand_kind(o.estimand);
    cfg.estimand.coordinate = o.coord;
    cfg.budgets = {o.budget};
    cfg.burn_in = o.burn_in;
    cfg.initial_rule = parse_initial_rule(o.initial);
    cfg.path = parse_path_kind(o.path);
    if (o.error == "auto") cfg.error_model.source = data.ehat2 ? ErrorSource::ExternalColumn : ErrorSource::Knn;
    else cfg.error_model.source = parse_error_source(o.error);
    cfg.error_model.k = o.k;
    cfg.error_model.bins = o.bins;
    cfg.rho_step = o.rho_step;
    cfg.seed = o.seed;
    cfg.floor = o.floor;
    cfg.trials = 1;
    cfg.resample = ResampleMode::Fixed;
    RhoGrid::make(o.rho_step);
    if (o.budget < 1 || o.budget > data.size())
        throw Error(ErrorCode::ConfigError, "budget must lie in [1, " + std::to_string(data.size()) + "]");
    cfg.estimand.validate(data.dim());
    return cfg;
}

MethodConfig method_from(const PlanOptions& o) {
    MethodConfig m;
    m.name = "robust";
    m.kind = MethodKind::Robust;
    m.constraint = parse_constraint_kind(o.constraint);
    m.c = o.c;
    m.cross_validate = o.cv;
    m.c_grid = o.c_grid;
    m.folds = o.folds;
    m.regions = RegionSource::BurnIn;
    m.tree_depth = o.tree_depth;
    for (const auto& item : o.c_region) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw Error(ErrorCode::ConfigError, "--c-region expects region:radius");
        try {
            m.c_per_region[std::stoi(item.substr(0, colon))] = std::stod(item.substr(colon + 1));
        } catch (const std::exception&) {
            throw Error(ErrorCode::ConfigError, "bad --c-region entry '" + item + "'");
        }
    }
    if (m.constraint == ConstraintSet::Kind::StructuredL2 && m.c_per_region.empty())
        throw Error(ErrorCode::ConfigError, "structured constraint needs --c-region");
    if (m.constraint == ConstraintSet::Kind::None && (m.c != 0.0 || m.cross_validate))
        throw Error(ErrorCode::ConfigError, "--c and --cv need a constraint other than none");
    if (m.c < 0.0) throw Error(ErrorCode::ConfigError, "--c must be nonnegative");
    return m;
}

int cmd_plan(const PlanOptions& o, std::ostream& out) {
    const Dataset data = load_csv(o.data);
    const ExperimentConfig cfg = config_from(o, data);
    const MethodConfig method = method_from(o);
    const std::uint64_t seed = trial_seed(o.seed, 0);
    const TrialPlan plan = plan_trial(cfg, data, o.budget, method, seed);

    std::string csv = "row_id,pi,xi\n";
    for (std::size_t i = 0; i < data.size(); ++i)
        csv += std::to_string(i) + "," + num(plan.rule.probs[i]) + "," + (plan.draw.xi[i] ? "1" : "0") + "\n";
    write_file_atomic(o.out, csv);

    json side;
    side["rho"] = plan.rho;
    side["c"] = plan.c;
    side["path"] = o.path;
    side["constraint"] = o.constraint;
    side["seed"] = o.seed;
    side["budget"] = o.budget;
    side["burn_in"] = plan.split.burn_in.size();
    side["burn_in_rows"] = plan.split.burn_in;
    side["initial_rule"] = o.initial;
    side["estimand"] = o.estimand;
    side["coordinate"] = o.coord;
    side["n"] = data.size();
    side["n_selected"] = plan.draw.realized_count;
    if (plan.cv) side["cv"] = {{"c_star", plan.cv->c_star}, {"c_grid", plan.cv->c_grid}, {"scores", plan.cv->scores}};
    write_file_atomic(o.out + ".json", side.dump(2) + "\n");

    if (!o.trace.empty()) {
        std::ostringstream t;
        write_trace_csv(t, plan.trace);
        write_file_atomic(o.trace, t.str());
    }
    out << side.dump(2) << "\n";
    return kExitOk;
}

struct PlanFile {
    std::vector<double> pi;
    std::vector<std::uint8_t> xi;
};

PlanFile read_plan(const std::string& path, std::size_t n) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open plan " + path);
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::ParseError, "empty plan file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "row_id,pi,xi") throw Error(ErrorCode::ParseError, "plan header must be row_id,pi,xi");
    PlanFile plan;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, pi, xi;
        if (!std::getline(ls, id, ',') || !std::getline(ls, pi, ',') || !std::getline(ls, xi))
            throw Error(ErrorCode::ParseError, "plan line " + std::to_string(row + 2) + " needs three fields");
        try {
            if (std::stoull(id) != row) throw Error(ErrorCode::ParseError, "plan row ids must be 0..n-1 in order");
            const double p = std::stod(pi);
            if (!(p > 0.0 && std::isfinite(p))) throw Error(ErrorCode::ParseError, "plan pi must be positive");
            plan.pi.push_back(p);
            if (xi != "0" && xi != "1") throw Error(ErrorCode::ParseError, "plan xi must be 0 or 1");
            plan.xi.push_back(xi == "1" ? 1 : 0);
        } catch (const std::logic_error&) {
            throw Error(ErrorCode::ParseError, "bad number on plan line " + std::to_string(row + 2));
        }
        ++row;
    }
    if (row != n)
        throw Error(ErrorCode::DimensionMismatch,
                    "plan has " + std::to_string(row) + " rows, data has " + std::to_string(n));
    return plan;
}

struct EstimateOptions {
    std::string data;
    std::string plan;
    std::string estimand = "mean";
    std::size_t coord = 0;
    double alpha = kDefaultAlpha;
    std::string out;
};

int cmd_estimate(const EstimateOptions& o, std::ostream& out) {
    EstimandSpec spec;
    spec.kind = parse_estimand_kind(o.estimand);
    spec.coordinate = o.coord;
    if (!(o.alpha > 0.0 && o.alpha < 1.0)) throw Error(ErrorCode::ConfigError, "--alpha must lie in (0, 1)");
    const Dataset data = load_csv(o.data);
    spec.validate(data.dim());
    const PlanFile file = read_plan(o.plan, data.size());
    SamplingRule rule;
    rule.probs = file.pi;
    double total = 0.0;
    for (double p : file.pi) total += p;
    rule.budget = Budget::make(std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(total)), 1, data.size()),
                               data.size());
    rule.floor = *std::min_element(file.pi.begin(), file.pi.end());
    LabelDraw draw;
    draw.xi = file.xi;
    for (auto x : draw.xi) draw.realized_count += x;
    const EstimateResult result = estimate_m(spec, data, draw, rule, o.alpha);
    const std::string text = to_json(result) + "\n";
    if (!o.out.empty()) write_file_atomic(o.out, text);
    out << text;
    return kExitOk;
}

int cmd_tune(const PlanOptions& o, std::ostream& out) {
    const Dataset data = load_csv(o.data);
    const ExperimentConfig cfg = config_from(o, data);
    PlanOptions scalar = o;
    if (scalar.constraint == "none") scalar.constraint = "l2";
    MethodConfig method = method_from(scalar);
    if (method.constraint == ConstraintSet::Kind::StructuredL2)
        throw Error(ErrorCode::ConfigError, "tuning covers scalar-radius constraint sets");
    method.cross_validate = true;
    const TrialPlan plan = plan_trial(cfg, data, o.budget, method, trial_seed(o.seed, 0));
    json j;
    j["c_star"] = plan.cv->c_star;
    j["c_grid"] = plan.cv->c_grid;
    j["scores"] = plan.cv->scores;
    j["folds"] = o.folds;
    j["burn_in"] = plan.split.burn_in.size();
    j["rho"] = plan.rho;
    out << j.dump(2) << "\n";
    return kExitOk;
}

void print_summary(const ExperimentResult& result, std::ostream& out) {
    out << std::left << std::setw(20) << "method" << std::right << std::setw(8) << "budget" << std::setw(12)
        << "n_eff" << std::setw(10) << "coverage" << std::setw(10) << "mean_rho" << std::setw(10) << "mean_c"
        << std::setw(8) << "failed" << "\n";
    out << std::fixed;
    for (const auto& s : result.summary) {
        out << std::left << std::setw(20) << s.method << std::right << std::setw(8) << s.budget << std::setw(12)
            << std::setprecision(1) << s.n_eff << std::setw(10) << std::setprecision(3) << s.coverage << std::setw(10)
            << std::setprecision(3) << s.mean_rho << std::setw(10) << std::setprecision(2) << s.mean_c
            << std::setw(8) << s.failed << "\n";
    }
    out << std::defaultfloat;
}

struct SimulateOptions {
    std::string config;
    std::string out = "results";
    unsigned threads = 0;
    bool no_svg = false;
};

int cmd_simulate(const SimulateOptions& o, std::ostream& out) {
    const ExperimentConfig cfg = ExperimentConfig::load(o.config);
    const Dataset base = load_source(cfg.dataset);
    const ExperimentResult result = run_experiment(cfg, base, o.threads);
    emit_report(cfg, result, o.out, {.svg = !o.no_svg});
    print_summary(result, out);
    return kExitOk;
}

std::vector<TrialRecord> read_trials(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::string line;
    std::getline(in, line);
    if (line.rfind("method,budget,trial,estimate,ci_lo,ci_hi,n_labeled,rho,c", 0) != 0)
        throw Error(ErrorCode::ParseError, "unexpected trials.csv header");
    std::vector<TrialRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::istringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() < 9) throw Error(ErrorCode::ParseError, "short trials.csv line");
        auto d = [](const std::string& s) { return s == "nan" ? std::nan("") : std::stod(s); };
        TrialRecord r;
        try {
            r.method = f[0];
            r.budget = std::stoull(f[1]);
            r.trial = std::stoull(f[2]);
            r.estimate = d(f[3]);
            r.ci_lo = d(f[4]);
            r.ci_hi = d(f[5]);
            r.n_labeled = std::stoull(f[6]);
            r.rho = d(f[7]);
            r.c = d(f[8]);
            if (f.size() > 9) r.sigma2_hat = d(f[9]);
            r.failed = f.size() > 10 ? f[10] == "1" : std::isnan(r.estimate);
        } catch (const std::logic_error&) {
            throw Error(ErrorCode::ParseError, "bad number in trials.csv");
        }
        records.push_back(r);
    }
    return records;
}

struct ReportCmdOptions {
    std::string config;
    std::string trials;
    std::string out = "results";
    bool no_svg = false;
};

int cmd_report(const ReportCmdOptions& o, std::ostream& out) {
    const ExperimentConfig cfg = ExperimentConfig::load(o.config);
    const Dataset base = load_source(cfg.dataset);
    ExperimentResult result;
    result.records = read_trials(o.trials);
    result.curve = EssCurve::from_data(base, cfg.estimand);
    result.summary = summarize(cfg, result.records, result.curve);
    emit_report(cfg, result, o.out, {.svg = !o.no_svg});
    print_summary(result, out);
    return kExitOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Active statistical inference with robust sampling rules"};
    app.name("robust_ai");
    app.require_subcommand(1);

    PlanOptions plan_opts;
    auto* plan = app.add_subcommand("plan", "choose labeling probabilities and draw which rows to label");
    add_plan_options(plan, plan_opts, true);

    EstimateOptions est_opts;
    auto* estimate = app.add_subcommand("estimate", "estimate from a plan and the collected labels");
    estimate->add_option("--data", est_opts.data, "CSV with labels filled for sampled rows")->required();
    estimate->add_option("--plan", est_opts.plan, "plan CSV written by the plan command")->required();
    estimate->add_option("--estimand", est_opts.estimand, "mean | linreg | logreg");
    estimate->add_option("--coord", est_opts.coord, "coordinate of interest");
    estimate->add_option("--alpha", est_opts.alpha, "1 - confidence level");
    estimate->add_option("--out", est_opts.out, "also write the JSON result here");

    PlanOptions tune_opts;
    auto* tune = app.add_subcommand("tune", "cross-validate the misspecification radius on the burn-in");
    add_plan_options(tune, tune_opts, false);

    SimulateOptions sim_opts;
    auto* simulate = app.add_subcommand("simulate", "run a repeated-trial experiment from a config file");
    simulate->add_option("--config", sim_opts.config, "experiment config (JSON)")->required();
    simulate->add_option("--out", sim_opts.out, "output directory");
    simulate->add_option("--threads", sim_opts.threads, "worker threads (0 = ROBUST_AI_THREADS or all cores)");
    simulate->add_flag("--no-svg", sim_opts.no_svg, "skip the SVG charts");

    ReportCmdOptions rep_opts;
    auto* report = app.add_subcommand("report", "rebuild the summary and charts from trials.csv");
    report->add_option("--config", rep_opts.config, "experiment config (JSON)")->required();
    report->add_option("--trials", rep_opts.trials, "trials.csv from a simulate run")->required();
    report->add_option("--out", rep_opts.out, "output directory");
    report->add_flag("--no-svg", rep_opts.no_svg, "skip the SVG charts");

    std::vector<std::string> argv_store{"robust_ai"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    try {
        if (plan->parsed()) return cmd_plan(plan_opts, out);
        if (estimate->parsed()) return cmd_estimate(est_opts, out);
        if (tune->parsed()) return cmd_tune(tune_opts, out);
        if (simulate->parsed()) return cmd_simulate(sim_opts, out);
        if (report->parsed()) return cmd_report(rep_opts, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code(e.category());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    }
    return kExitConfig;
}

} // namespace robust_ai::cli

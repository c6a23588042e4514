#include "icsad/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <future>
#include <iostream>
#include <memory>
#include <regex>

#include "icsad/dataset.hpp"
#include "icsad/decision.hpp"
#include "icsad/digest.hpp"
#include "icsad/evaluation.hpp"
#include "icsad/scoring.hpp"
#include "icsad/seqmodel.hpp"
#include "icsad/simulator.hpp"
#include "icsad/swat.hpp"
#include "icsad/trainer.hpp"
#include "text_util.hpp"

#ifndef ICSAD_VERSION
#define ICSAD_VERSION "0.0.0"
#endif

namespace icsad {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

class Manifest {
public:
    Manifest(std::string command, fs::path out_dir) : out_dir_(std::move(out_dir)) {
        j_["tool"] = "icsad";
        j_["version"] = ICSAD_VERSION;
        j_["command"] = std::move(command);
        j_["config"] = Json::object();
        j_["inputs"] = Json::array();
        j_["outputs"] = Json::array();
    }

    Json& config() { return j_["config"]; }
    Json& root() { return j_; }

    void input(const fs::path& path) {
        j_["inputs"].push_back({{"path", path.generic_string()}, {"sha256", sha256_file(path)}});
    }
    /// rel is relative to the output directory.
    void output(const fs::path& rel) {
        j_["outputs"].push_back({{"path", rel.generic_string()}, {"sha256", sha256_file(out_dir_ / rel)}});
    }
    /// Loss logs are digested without their wall-clock column.
    void training_log(const fs::path& rel) {
        std::string stable;
        for (auto line : detail::lines(detail::read_file(out_dir_ / rel))) {
            const auto cut = line.rfind(',');
            stable.append(line.substr(0, cut));
            stable += '\n';
        }
        j_["outputs"].push_back(
            {{"path", rel.generic_string()}, {"sha256", sha256_hex(stable)}, {"digest_excludes", "wall_seconds"}});
    }
    void write() const {
        std::ofstream out(out_dir_ / "manifest.json", std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (out_dir_ / "manifest.json").string());
        out << j_.dump(2) << '\n';
    }

private:
    fs::path out_dir_;
    Json j_;
};

Json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"trials", c.trials},
            {"amsgrad", c.amsgrad},
            {"weight_decay", c.weight_decay},
            {"seed", c.seed},
            {"shuffle", c.shuffle},
            {"hidden_dim", c.hidden_dim},
            {"num_layers", c.num_layers},
            {"attention", to_string(c.attention)},
            {"precision", c.precision == Precision::f32 ? "f32" : "f64"},
            {"micro_batch", c.micro_batch}};
}

Json to_json(const RatingConfig& c) {
    return {{"sum_window_seconds", c.sum_window_seconds},
            {"outliers_removed", c.outliers_removed},
            {"history_size", c.history_size},
            {"high_percentile", c.high_percentile},
            {"low_percentile", c.low_percentile},
            {"ratio_divisor", c.ratio_divisor},
            {"alert_threshold", c.alert_threshold},
            {"merge_gap_seconds", c.merge_gap_seconds},
            {"attribution_lookback_seconds", c.attribution_lookback_seconds}};
}

struct DataOptions {
    std::string data;
    std::string schema;
    std::string format = "csv";
};

void add_data_options(CLI::App* cmd, DataOptions& o) {
    cmd->add_option("--data", o.data, "Time-series CSV")->required()->check(CLI::ExistingFile);
    cmd->add_option("--schema", o.schema, "Schema CSV (name,kind,process); inferred from the header if omitted")
        ->check(CLI::ExistingFile);
    cmd->add_option("--format", o.format, "csv or swat")->check(CLI::IsMember({"csv", "swat"}));
}

TagSeries load_data(const DataOptions& o, Manifest& manifest) {
    manifest.input(o.data);
    if (o.format == "swat") return load_swat_csv(o.data);
    if (o.schema.empty()) return load_csv(o.data);
    manifest.input(o.schema);
    return load_csv(o.data, load_schema(o.schema));
}

void add_rating_options(CLI::App* cmd, RatingConfig& r) {
    cmd->add_option("--sum-window", r.sum_window_seconds, "Trimmed-sum window W_r in seconds");
    cmd->add_option("--outliers", r.outliers_removed, "Largest distances dropped per window (k)");
    cmd->add_option("--history", r.history_size, "Window sums kept for the percentiles (N)");
    cmd->add_option("--high-percentile", r.high_percentile);
    cmd->add_option("--low-percentile", r.low_percentile);
    cmd->add_option("--ratio", r.ratio_divisor, "Ratio divisor R");
    cmd->add_option("--threshold", r.alert_threshold, "Alert threshold on S");
    cmd->add_option("--merge-gap", r.merge_gap_seconds, "Merge alerts closer than this many seconds");
    cmd->add_option("--lookback", r.attribution_lookback_seconds, "Seconds before an alert used for attribution");
}

std::vector<int> select_processes(const TagSchema& schema, const std::string& which) {
    const auto ids = schema.process_ids();
    if (which == "all") return ids;
    int p = 0;
    try {
        p = static_cast<int>(detail::parse_int(which));
    } catch (const std::exception&) {
        throw std::invalid_argument("invalid process id '" + which + "'");
    }
    if (std::find(ids.begin(), ids.end(), p) == ids.end())
        throw std::invalid_argument("invalid process id " + which + ": the data has no tags for it");
    return {p};
}

std::vector<fs::path> find_models(const std::vector<std::string>& paths) {
    static const std::regex name(R"(process[0-9]+\.ckpt)");
    std::vector<fs::path> out;
    for (const auto& p : paths) {
        if (!fs::is_directory(p)) {
            if (!fs::exists(p)) throw std::invalid_argument("model not found: " + p);
            out.emplace_back(p);
            continue;
        }
        std::vector<fs::path> found;
        for (const auto& entry : fs::directory_iterator(p))
            if (entry.is_regular_file() && std::regex_match(entry.path().filename().string(), name))
                found.push_back(entry.path());
        if (found.empty()) throw std::invalid_argument("no process*.ckpt in " + p);
        std::sort(found.begin(), found.end());
        out.insert(out.end(), found.begin(), found.end());
    }
    return out;
}

// ---- simulate

struct SimulateArgs {
    std::string spec, script, out;
    std::size_t duration = 20000;
    std::uint64_t seed = 0;
    bool noise_free = false;
};

int cmd_simulate(const SimulateArgs& a, bool seed_given, std::ostream& out) {
    fs::create_directories(a.out);
    Manifest manifest("simulate", a.out);
    PlantSpec spec = default_plant_spec();
    if (!a.spec.empty()) {
        manifest.input(a.spec);
        spec = load_plant_spec(a.spec);
    }
    if (seed_given) spec.seed = a.seed;
    if (a.noise_free) spec.noise_free = true;
    AttackScript script;
    if (!a.script.empty()) {
        manifest.input(a.script);
        script = load_attack_script(a.script);
    }
    const auto trace = simulate_trace(spec, a.duration, script);
    const fs::path dir = a.out;
    write_csv(dir / "data.csv", trace.series);
    write_schema(dir / "schema.csv", trace.series.schema);
    const auto labels = script.labels();
    write_labels(dir / "labels.csv", labels);
    {
        std::ofstream f(dir / "plant.json", std::ios::binary);
        f << plant_spec_to_json(spec);
    }
    manifest.root()["seed"] = spec.seed;
    manifest.config() = {{"duration_s", a.duration}, {"noise_free", spec.noise_free}};
    for (const char* name : {"data.csv", "schema.csv", "labels.csv", "plant.json"}) manifest.output(name);
    manifest.write();
    out << "simulated " << a.duration << " s, " << trace.series.cols() << " tags, " << labels.size()
        << " attacks -> " << a.out << "\n";
    return kExitOk;
}

// ---- train

struct TrainArgs {
    DataOptions data;
    std::string process = "all";
    std::string out;
    std::string attention = "general";
    std::string precision = "f32";
    bool no_amsgrad = false;
    unsigned threads = 1;
    TrainConfig config;
};

int cmd_train(TrainArgs a, std::ostream& out) {
    a.config.attention = parse_attention_kind(a.attention);
    a.config.precision = a.precision == "f64" ? Precision::f64 : Precision::f32;
    a.config.amsgrad = !a.no_amsgrad;
    a.config.validate();
    fs::create_directories(a.out);
    Manifest manifest("train", a.out);
    const auto series = load_data(a.data, manifest);
    const auto processes = select_processes(series.schema, a.process);
    const fs::path dir = a.out;

    auto train_one = [&](int p) {
        auto checkpoints = [&, p](int trial) -> EpochCallback {
            auto saver = std::make_shared<EpochCheckpointer>(
                dir, "process" + std::to_string(p) + ".trial" + std::to_string(trial));
            return [saver](const EpochReport& r, const SeqModelParams& params) { (*saver)(r, params); };
        };
        return train_best_of(series, p, a.config, {}, checkpoints);
    };

    std::vector<BestOfResult> results(processes.size());
    const unsigned threads = std::max(1u, a.threads);
    for (std::size_t first = 0; first < processes.size(); first += threads) {
        std::vector<std::future<BestOfResult>> jobs;
        for (std::size_t i = first; i < std::min(processes.size(), first + threads); ++i)
            jobs.push_back(std::async(threads > 1 ? std::launch::async : std::launch::deferred, train_one,
                                      processes[i]));
        for (std::size_t i = 0; i < jobs.size(); ++i) results[first + i] = jobs[i].get();
    }

    manifest.root()["seed"] = a.config.seed;
    manifest.config() = to_json(a.config);
    auto& trials = manifest.root()["trials"];
    trials = Json::object();
    for (std::size_t i = 0; i < processes.size(); ++i) {
        const int p = processes[i];
        const auto& r = results[i];
        const std::string stem = "process" + std::to_string(p);
        save_checkpoint(dir / (stem + ".ckpt"), r.params);
        write_training_log(dir / (stem + ".loss.csv"), r.history);
        manifest.output(stem + ".ckpt");
        manifest.training_log(stem + ".loss.csv");
        for (int t = 0; t < a.config.trials; ++t)
            for (const char* kind : {".last.ckpt", ".best.ckpt"}) {
                const auto rel = stem + ".trial" + std::to_string(t) + kind;
                if (fs::exists(dir / rel)) manifest.output(rel);
            }
        Json rows = Json::array();
        for (const auto& t : r.trials)
            rows.push_back({{"seed", t.seed},
                            {"final_loss", std::isfinite(t.final_loss) ? Json(t.final_loss) : Json(nullptr)},
                            {"error", t.error}});
        trials[std::to_string(p)] = {{"chosen", r.chosen}, {"trials", rows}};
        out << "process " << p << ": loss " << detail::format_double(r.history.front().mean_loss) << " -> "
            << detail::format_double(r.history.back().mean_loss) << " (seed " << r.trials[r.chosen].seed << ")\n";
    }
    manifest.write();
    return kExitOk;
}

// ---- detect

struct DetectArgs {
    DataOptions data;
    std::vector<std::string> models;
    std::string out;
    double p = 4.0;
    unsigned threads = 1;
    RatingConfig rating;
};

int cmd_detect(const DetectArgs& a, std::ostream& out) {
    a.rating.validate();
    fs::create_directories(a.out);
    Manifest manifest("detect", a.out);
    const auto series = load_data(a.data, manifest);
    const fs::path dir = a.out;
    std::vector<AlertEvent> alerts;
    for (const auto& path : find_models(a.models)) {
        manifest.input(path);
        const auto model = load_checkpoint(path);
        const auto errors = score_series(model, series, {a.p, 256, std::max(1u, a.threads)});
        const auto detection = detect(errors, a.rating);
        const auto pid = std::to_string(model.config.process_id);
        write_error_csv(dir / ("errors_p" + pid + ".csv"), errors);
        write_rating_csv(dir / ("ratings_p" + pid + ".csv"), detection.ratings);
        manifest.output("errors_p" + pid + ".csv");
        manifest.output("ratings_p" + pid + ".csv");
        alerts.insert(alerts.end(), detection.alerts.begin(), detection.alerts.end());
        out << "process " << pid << ": " << errors.size() << " scored seconds, " << detection.alerts.size()
            << " alerts\n";
    }
    std::stable_sort(alerts.begin(), alerts.end(), [](const AlertEvent& x, const AlertEvent& y) {
        return x.start != y.start ? x.start < y.start : x.process_id < y.process_id;
    });
    write_alerts(dir / "alerts.jsonl", alerts);
    manifest.output("alerts.jsonl");
    manifest.config() = to_json(a.rating);
    manifest.config()["p"] = a.p;
    manifest.write();
    return alerts.empty() ? kExitOk : kExitAlerts;
}

// ---- evaluate

struct EvaluateArgs {
    std::string alerts, labels, out, from, to;
    int grace_minutes = 15;
    int long_tail_minutes = 60;
    int tfp_gap_minutes = 15;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
    fs::create_directories(a.out);
    Manifest manifest("evaluate", a.out);
    manifest.input(a.alerts);
    manifest.input(a.labels);
    const auto alerts = load_alerts(a.alerts);
    const auto labels = load_labels(a.labels);
    EvalConfig config;
    config.grace = std::chrono::minutes{a.grace_minutes};
    config.long_tail = std::chrono::minutes{a.long_tail_minutes};
    config.tfp_merge_gap = std::chrono::minutes{a.tfp_gap_minutes};
    if (!a.from.empty() || !a.to.empty()) {
        if (a.from.empty() || a.to.empty()) throw std::invalid_argument("--from and --to go together");
        config.window = std::pair{parse_timestamp(a.from), parse_timestamp(a.to)};
    }
    const auto report = render_report(evaluate(alerts, labels, config));
    write_report(a.out, report);
    for (const char* name : {"attacks.csv", "false_positives.csv", "summary.txt"}) manifest.output(name);
    manifest.config() = {{"grace_minutes", a.grace_minutes},
                         {"long_tail_minutes", a.long_tail_minutes},
                         {"tfp_gap_minutes", a.tfp_gap_minutes}};
    manifest.write();
    out << report.summary;
    return kExitOk;
}

// ---- plot-errors

struct PlotArgs {
    std::vector<std::string> errors;
    std::string out;
    RatingConfig rating;
};

int cmd_plot_errors(const PlotArgs& a, std::ostream& out) {
    a.rating.validate();
    fs::create_directories(a.out);
    Manifest manifest("plot-errors", a.out);
    for (const auto& path : a.errors) {
        manifest.input(path);
        const auto errors = load_error_csv(path);
        Detection detection;
        if (errors.size() >= a.rating.min_length()) detection = detect(errors, a.rating);
        const auto rel = fs::path(path).stem().string() + ".plot.csv";
        std::ofstream f(fs::path(a.out) / rel, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write " + rel);
        f << "timestamp,D,sum,S,alert\n";
        const std::size_t offset = errors.size() - detection.ratings.size();
        std::size_t next_alert = 0;
        for (std::size_t t = 0; t < errors.size(); ++t) {
            const auto ts = errors.timestamps[t];
            while (next_alert < detection.alerts.size() && detection.alerts[next_alert].end < ts) ++next_alert;
            const bool in_alert = next_alert < detection.alerts.size() && detection.alerts[next_alert].start <= ts;
            f << format_timestamp(ts) << ',' << detail::format_double(errors.distance[static_cast<Eigen::Index>(t)]);
            if (t >= offset)
                f << ',' << detail::format_double(detection.ratings.window_sum[t - offset]) << ','
                  << detail::format_double(detection.ratings.rating[t - offset]);
            else
                f << ",,";
            f << ',' << (in_alert ? 1 : 0) << '\n';
        }
        f.close();
        manifest.output(rel);
        out << rel << ": " << errors.size() << " rows\n";
    }
    manifest.config() = to_json(a.rating);
    manifest.write();
    return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Per-process sequence-to-sequence anomaly detection for ICS time series", "icsad"};
    app.set_version_flag("--version", ICSAD_VERSION);
    app.set_config("--config", "", "TOML/INI file with option values; command-line flags win");
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Generate synthetic plant data with optional attacks");
    simulate->add_option("--spec", sim.spec, "Plant spec JSON (default: built-in 3-process plant)")
        ->check(CLI::ExistingFile);
    simulate->add_option("--script", sim.script, "Attack script JSON")->check(CLI::ExistingFile);
    simulate->add_option("--duration", sim.duration, "Seconds to simulate")->check(CLI::PositiveNumber);
    auto* sim_seed = simulate->add_option("--seed", sim.seed, "Overrides the spec's seed");
    simulate->add_flag("--noise-free", sim.noise_free, "Record true values without sensor noise");
    simulate->add_option("--out", sim.out, "Output directory")->required();

    TrainArgs tr;
    auto* train = app.add_subcommand("train", "Train one model per process");
    add_data_options(train, tr.data);
    train->add_option("--process", tr.process, "Process id or \"all\"");
    train->add_option("--out", tr.out, "Output directory")->required();
    train->add_option("--epochs", tr.config.epochs);
    train->add_option("--batch-size", tr.config.batch_size);
    train->add_option("--learning-rate", tr.config.learning_rate);
    train->add_option("--trials", tr.config.trials, "Independent trainings; the lowest final loss wins");
    train->add_option("--hidden-dim", tr.config.hidden_dim);
    train->add_option("--layers", tr.config.num_layers);
    train->add_option("--attention", tr.attention)->check(CLI::IsMember({"general", "dot", "additive"}));
    train->add_option("--weight-decay", tr.config.weight_decay);
    train->add_flag("--no-amsgrad", tr.no_amsgrad);
    train->add_option("--seed", tr.config.seed);
    train->add_option("--micro-batch", tr.config.micro_batch, "Windows per gradient chunk");
    train->add_option("--precision", tr.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
    train->add_option("--threads", tr.threads, "Processes trained concurrently");
    train->add_flag("--parallel-trials", tr.config.parallel_trials, "Run the trials of a process concurrently");

    DetectArgs det;
    auto* detect_cmd = app.add_subcommand("detect", "Score data with trained models and emit alerts");
    add_data_options(detect_cmd, det.data);
    detect_cmd->add_option("--model", det.models, "Checkpoint file or directory of process*.ckpt")->required();
    detect_cmd->add_option("--out", det.out, "Output directory")->required();
    detect_cmd->add_option("--p", det.p, "Norm used for the distance");
    detect_cmd->add_option("--threads", det.threads, "Scoring threads per model");
    add_rating_options(detect_cmd, det.rating);

    EvaluateArgs ev;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score alerts against attack labels");
    evaluate_cmd->add_option("--alerts", ev.alerts, "alerts.jsonl")->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--labels", ev.labels, "Label CSV")->required()->check(CLI::ExistingFile);
    evaluate_cmd->add_option("--out", ev.out, "Output directory")->required();
    evaluate_cmd->add_option("--grace-minutes", ev.grace_minutes);
    evaluate_cmd->add_option("--long-tail-minutes", ev.long_tail_minutes);
    evaluate_cmd->add_option("--tfp-gap-minutes", ev.tfp_gap_minutes);
    evaluate_cmd->add_option("--from", ev.from, "Start of the evaluated data range");
    evaluate_cmd->add_option("--to", ev.to, "End of the evaluated data range");

    PlotArgs pl;
    auto* plot = app.add_subcommand("plot-errors", "Turn error dumps into plot-ready CSVs with ratings and alerts");
    plot->add_option("--errors", pl.errors, "errors_p*.csv from detect")->required()->check(CLI::ExistingFile);
    plot->add_option("--out", pl.out, "Output directory")->required();
    add_rating_options(plot, pl.rating);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*simulate) return cmd_simulate(sim, sim_seed->count() > 0, out);
        if (*train) return cmd_train(tr, out);
        if (*detect_cmd) return cmd_detect(det, out);
        if (*evaluate_cmd) return cmd_evaluate(ev, out);
        if (*plot) return cmd_plot_errors(pl, out);
    } catch (const std::exception& e) {
        err << "icsad: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

int run_cli(int argc, const char* const* argv) { return run_cli(argc, argv, std::cout, std::cerr); }

}  // namespace icsad

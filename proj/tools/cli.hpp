#pragma once

// Command surface for the data-owner workflow. Everything lives behind
// run_cli() so tests can drive the commands in-process.
//
// Exit codes: 0 success, 1 internal, 2 input error, 3 selection error,
// 4 capacity error, 5 output conflict.

#include "tracemark/tracemark.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace tracemark::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

enum ExitCode : int {
    kOk = 0,
    kInternal = 1,
    kInputError = 2,
    kSelectionError = 3,
    kCapacityError = 4,
    kOutputConflict = 5,
};

inline int exit_code_for(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InsufficientCandidates: return kSelectionError;
        case ErrorKind::PoolTooSmall:
        case ErrorKind::ExhaustedAttempts: return kCapacityError;
        case ErrorKind::OutputExists:
        case ErrorKind::DuplicateUser: return kOutputConflict;
        case ErrorKind::Io:
        case ErrorKind::NonFiniteLoss: return kInternal;
        default: return kInputError;
    }
}

struct SchemeFlags {
    std::string kind = "dwt";
    double amp_low = 0.0;
    double amp_high = kDefaultDwtAmplitude;
    double mu = 0.0;
    double sigma = kDefaultGaussianSigma;
    double eta = kDefaultAdversarialEta;
    std::size_t steps = kDefaultAdversarialSteps;
    double step_size = 0.0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--scheme", kind, "Watermark scheme")->check(CLI::IsMember({"dwt", "gaussian", "adversarial"}));
        cmd->add_option("--amp-low", amp_low, "DWT key lower bound (unit scale)");
        cmd->add_option("--amp-high", amp_high, "DWT key upper bound (unit scale)");
        cmd->add_option("--mu", mu, "Gaussian mean (unit scale)");
        cmd->add_option("--sigma", sigma, "Gaussian standard deviation (unit scale)");
        cmd->add_option("--eta", eta, "Adversarial l-inf budget");
        cmd->add_option("--steps", steps, "Adversarial ascent steps");
        cmd->add_option("--step-size", step_size, "Adversarial step (0 = eta/steps)");
    }

    WatermarkScheme build(Seed seed) const {
        if (kind == "gaussian") return GaussianParams{mu, sigma, seed};
        if (kind == "adversarial") return AdversarialScheme{AdversarialParams{eta, steps, step_size, {}}, seed};
        return DwtKey(seed, amp_low, amp_high);
    }
};

struct PoolFlags {
    std::vector<std::string> tokens;
    std::string manifest;
    double band_min = 0.009;
    double band_max = 0.018;
    std::size_t size = 10;

    void attach(CLI::App* cmd) {
        cmd->add_option("--pool", tokens, "Explicit candidate tokens (comma separated)")->delimiter(',');
        cmd->add_option("--pool-manifest", manifest, "Select the pool from this manifest's frequencies")
            ->check(CLI::ExistingFile);
        cmd->add_option("--band-min", band_min, "Lowest caption frequency admitted to the pool");
        cmd->add_option("--band-max", band_max, "Highest caption frequency admitted to the pool");
        cmd->add_option("--pool-size", size, "Number of pool tokens taken from the band");
    }

    CandidatePool resolve(const DatasetManifest* fallback) const {
        if (!tokens.empty()) return CandidatePool{tokens, {}};
        if (!manifest.empty()) {
            const auto m = load_manifest(manifest, false);
            return select_preexisting(token_frequencies(m), band_min, band_max, size);
        }
        if (fallback) return select_preexisting(token_frequencies(*fallback), band_min, band_max, size);
        throw Error(ErrorKind::InvalidArgument, "no candidate pool: pass --pool or --pool-manifest");
    }
};

struct ProbeFlags {
    std::size_t k = 16;
    double tau = 0.5;
    std::string stub = kStylePromptStub;

    void attach(CLI::App* cmd) {
        cmd->add_option("--k", k, "Generations per probed token")->check(CLI::PositiveNumber);
        cmd->add_option("--tau", tau, "Fraction of flagged generations that counts as triggered")
            ->check(CLI::Range(0.0, 1.0));
        cmd->add_option("--stub", stub, "Prompt text appended after the probed token");
    }

    ProbeConfig config() const { return ProbeConfig{k, tau, stub}; }
};

struct OracleFlags {
    std::string ledger;
    std::string kind = "simulated";
    std::uint64_t user = 0;
    std::string drop;
    double q = 1.0;
    double r = 0.0;
    std::size_t width = kDefaultRenderSize;
    std::size_t height = kDefaultRenderSize;

    void attach(CLI::App* cmd) {
        cmd->add_option("--ledger", ledger, "Authorization ledger")->required()->check(CLI::ExistingFile);
        cmd->add_option("--oracle", kind, "Suspect model: simulated, clean or partial")
            ->check(CLI::IsMember({"simulated", "clean", "partial"}));
        cmd->add_option("--user", user, "Ledger user whose release the simulated model was trained on");
        cmd->add_option("--drop", drop, "Partial oracle: trigger token that never fires (default: last)");
        cmd->add_option("--q", q, "Trigger fidelity")->check(CLI::Range(0.0, 1.0));
        cmd->add_option("--r", r, "False watermark rate")->check(CLI::Range(0.0, 1.0));
        cmd->add_option("--width", width, "Render width");
        cmd->add_option("--height", height, "Render height");
    }

    std::unique_ptr<SimulatedModel> build(const std::vector<LedgerEntry>& entries, Seed seed) const {
        const Seed model_seed = split(seed, "oracle-model");
        if (kind == "clean")
            return std::make_unique<SimulatedModel>(ActivationTokenSet{}, default_user_scheme(model_seed), model_seed,
                                                    0.0, 0.0, width, height);
        const LedgerEntry* entry = nullptr;
        for (const auto& e : entries)
            if (e.user_id == user) entry = &e;
        if (!entry) throw Error(ErrorKind::InvalidArgument, "user " + std::to_string(user) + " is not in the ledger");
        auto model = std::make_unique<SimulatedModel>(entry->token_set, entry->scheme, model_seed, q, r, width, height);
        if (kind == "partial") {
            const std::string dropped = drop.empty() ? entry->token_set.tokens.back() : drop;
            if (!entry->token_set.contains(dropped))
                throw Error(ErrorKind::InvalidArgument, "--drop token is not in the user's set");
            model->set_token_fidelity(dropped, 0.0);
        }
        return model;
    }
};

namespace detail {

inline std::string option_value(const CLI::Option* opt) {
    if (opt->count() > 0) {
        const auto& res = opt->results();
        std::string joined;
        for (std::size_t i = 0; i < res.size(); ++i) joined += (i ? "," : "") + res[i];
        return joined;
    }
    return opt->get_default_str();
}

inline bool has_flag(const std::vector<std::string>& args, const std::string& name) {
    const std::string flag = "--" + name;
    for (const auto& a : args)
        if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    return false;
}

inline void append_config_args(const Json& section, const std::vector<std::string>& given,
                               std::vector<std::string>& out) {
    for (const auto& [key, value] : section.items()) {
        if (value.is_object() || key == "config" || has_flag(given, key)) continue;
        if (value.is_boolean()) {
            if (value.get<bool>()) out.push_back("--" + key);
        } else if (value.is_array()) {
            std::string joined;
            for (const auto& v : value) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
            out.push_back("--" + key + "=" + joined);
        } else {
            out.push_back("--" + key + "=" + (value.is_string() ? value.get<std::string>() : value.dump()));
        }
    }
}

/// Merges a JSON config file into the argument list. Top-level keys are global
/// options, nested objects are per-command; anything given on the command
/// line wins.
inline std::vector<std::string> expand_config(std::vector<std::string> args,
                                              const std::vector<std::string>& commands) {
    std::string path;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
    }
    if (path.empty()) return args;
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::MissingFile, path);
    Json doc;
    try {
        doc = Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorKind::InvalidArgument, std::string("config: ") + e.what());
    }
    std::string command;
    for (const auto& a : args)
        if (std::find(commands.begin(), commands.end(), a) != commands.end()) {
            command = a;
            break;
        }
    std::vector<std::string> global, local;
    append_config_args(doc, args, global);
    if (!command.empty() && doc.contains(command)) append_config_args(doc[command], args, local);
    std::vector<std::string> merged{args.front()};
    merged.insert(merged.end(), global.begin(), global.end());
    merged.insert(merged.end(), args.begin() + 1, args.end());
    merged.insert(merged.end(), local.begin(), local.end());
    return merged;
}

inline void write_json(const Json& j, const fs::path& path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline std::string fixed3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

} // namespace detail

class Cli {
public:
    Cli() : app_("Dataset watermarking and leak tracing for image-caption datasets", "tracemark") {
        app_.option_defaults()->always_capture_default();
        app_.fallthrough();
        app_.require_subcommand(1);
        app_.add_option("--seed", seed_, "Global seed; every random stream derives from it");
        app_.add_option("--config", config_path_, "JSON config file (command-line flags win)");

        add_frequencies();
        add_distribute();
        add_inject_twa();
        add_train_detector();
        add_probe();
        add_trace();
        add_degrade();
        add_simulate();
        add_eval();
    }

    int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
        out_ = &out;
        try {
            args = detail::expand_config(std::move(args), command_names());
        } catch (const Error& e) {
            err << "error: " << e.what() << '\n';
            return exit_code_for(e.kind());
        }
        std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
        try {
            app_.parse(std::move(reversed));
        } catch (const CLI::ParseError& e) {
            const int code = app_.exit(e, out, err);
            return code == 0 ? kOk : kInputError;
        }
        try {
            for (auto* sub : app_.get_subcommands()) {
                active_ = sub;
                return handlers_.at(sub->get_name())();
            }
            return kInputError;
        } catch (const Error& e) {
            err << "error: " << e.what() << '\n';
            return exit_code_for(e.kind());
        } catch (const std::exception& e) {
            err << "internal error: " << e.what() << '\n';
            return kInternal;
        }
    }

private:
    std::vector<std::string> command_names() const {
        std::vector<std::string> names;
        for (const auto& [name, _] : handlers_) names.push_back(name);
        return names;
    }

    Seed seed() const { return Seed{seed_}; }

    /// The resolved configuration of the running command.
    Json run_config() const {
        Json j;
        j["command"] = active_->get_name();
        j["seed"] = seed_;
        Json opts = Json::object();
        for (const auto* opt : active_->get_options()) {
            if (opt->get_name() == "--help" || opt->get_name() == "-h") continue;
            std::string name = opt->get_single_name();
            opts[name] = detail::option_value(opt);
        }
        j["options"] = std::move(opts);
        return j;
    }

    void emit(const Json& j, const std::string& out_path, bool as_json, const std::string& text) {
        if (!out_path.empty()) detail::write_json(j, out_path);
        if (as_json || text.empty()) *out_ << j.dump(2) << '\n';
        else *out_ << text;
    }

    CLI::App* command(const std::string& name, const std::string& help, std::function<int()> handler) {
        auto* sub = app_.add_subcommand(name, help);
        handlers_[name] = std::move(handler);
        return sub;
    }

    // -- frequencies -----------------------------------------------------------------
    struct {
        std::string manifest, out;
        double band_min = 0.009, band_max = 0.018;
        std::size_t k = 10;
        bool json = false;
    } freq_;

    void add_frequencies() {
        auto* cmd = command("frequencies", "Caption-frequency table and pre-existing token selection",
                            [this] { return cmd_frequencies(); });
        cmd->add_option("--manifest", freq_.manifest, "Dataset manifest (JSONL)")->required()->check(CLI::ExistingFile);
        cmd->add_option("--band-min", freq_.band_min, "Lowest admitted frequency");
        cmd->add_option("--band-max", freq_.band_max, "Highest admitted frequency");
        cmd->add_option("--k", freq_.k, "Number of tokens to select");
        cmd->add_option("--out", freq_.out, "Write the JSON result here");
        cmd->add_flag("--json", freq_.json, "Print JSON instead of a table");
    }

    int cmd_frequencies() {
        const auto manifest = load_manifest(freq_.manifest, false);
        const auto stats = token_frequencies(manifest);
        const auto pool = select_preexisting(stats, freq_.band_min, freq_.band_max, freq_.k);
        Json j;
        j["config"] = run_config();
        j["N"] = stats.captions;
        Json rows = Json::array();
        std::string text;
        char line[128];
        std::snprintf(line, sizeof line, "%-6s %-20s %s\n", "Index", "Token", "Frequency");
        text += line;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            rows.push_back({{"index", i + 1}, {"token", pool.tokens[i]}, {"frequency", pool.frequencies[i]},
                            {"captions", stats.counts.at(pool.tokens[i])}});
            std::snprintf(line, sizeof line, "%-6zu %-20s %s\n", i + 1, pool.tokens[i].c_str(),
                          detail::fixed3(pool.frequencies[i]).c_str());
            text += line;
        }
        j["tokens"] = std::move(rows);
        emit(j, freq_.out, freq_.json, text);
        return kOk;
    }

    // -- distribute ------------------------------------------------------------------
    struct {
        std::string manifest, out_dir, ledger, created = "1970-01-01T00:00:00Z";
        std::size_t users = 1, min_tokens = 2, max_tokens = 5;
        bool force = false;
        SchemeFlags scheme;
        PoolFlags pool;
    } dist_;

    void add_distribute() {
        auto* cmd = command("distribute", "Assign token sets and write one watermarked release per user",
                            [this] { return cmd_distribute(); });
        cmd->add_option("--manifest", dist_.manifest, "Dataset manifest (JSONL)")->required()->check(CLI::ExistingFile);
        cmd->add_option("--out-dir", dist_.out_dir, "Root directory for user releases")->required();
        cmd->add_option("--ledger", dist_.ledger, "Ledger path (default <out-dir>/ledger.json)");
        cmd->add_option("--users", dist_.users, "Number of data users T")->check(CLI::PositiveNumber);
        cmd->add_option("--min-tokens", dist_.min_tokens, "Smallest token set L");
        cmd->add_option("--max-tokens", dist_.max_tokens, "Largest token set R");
        cmd->add_option("--created", dist_.created, "Timestamp recorded in ledger entries");
        cmd->add_flag("--force", dist_.force, "Replace existing releases and ledger");
        dist_.scheme.attach(cmd);
        dist_.pool.attach(cmd);
    }

    int cmd_distribute() {
        const auto manifest = load_manifest(dist_.manifest);
        const auto pool = dist_.pool.resolve(&manifest);
        const auto sets = assign_token_sets(dist_.users, dist_.min_tokens, dist_.max_tokens, pool, split(seed(), "assign"));

        const fs::path root = dist_.out_dir;
        const fs::path ledger = dist_.ledger.empty() ? root / "ledger.json" : fs::path(dist_.ledger);
        auto user_dir = [&](std::size_t id) { return root / ("user_" + std::to_string(id)); };
        bool exists = fs::exists(ledger) || fs::exists(root / "pool.json");
        for (std::size_t t = 1; t <= sets.size() && !exists; ++t) exists = fs::exists(user_dir(t));
        if (exists && !dist_.force) throw Error(ErrorKind::OutputExists, root.string() + " already holds releases");
        if (dist_.force) {
            fs::remove(ledger);
            for (std::size_t t = 1; t <= sets.size(); ++t) fs::remove_all(user_dir(t));
        }

        const Json config = run_config();
        Json summary = Json::array();
        for (std::size_t t = 1; t <= sets.size(); ++t) {
            LedgerEntry entry;
            entry.user_id = t;
            entry.token_set = sets[t - 1];
            entry.scheme = dist_.scheme.build(split(seed(), "user-scheme", t));
            entry.created = dist_.created;
            entry.config = config;
            const Release release = distribute_waa(manifest, entry.token_set, entry.scheme, user_dir(t));
            entry.report = release.report;
            Json release_json;
            release_json["config"] = config;
            release_json["user_id"] = t;
            release_json["tokens"] = entry.token_set.tokens;
            release_json["scheme"] = scheme_to_json(entry.scheme);
            release_json["report"] = report_to_json(release.report);
            detail::write_json(release_json, user_dir(t) / "release.json");
            summary.push_back({{"user_id", t}, {"tokens", entry.token_set.tokens}, {"M", release.report.modified},
                               {"N", release.report.total}, {"p", release.report.ratio()}});
            record_release(ledger, std::move(entry));
        }
        Json pool_json;
        pool_json["config"] = config;
        pool_json["tokens"] = pool.tokens;
        pool_json["frequencies"] = pool.frequencies;
        detail::write_json(pool_json, root / "pool.json");

        Json j;
        j["config"] = config;
        j["ledger"] = ledger.string();
        j["users"] = std::move(summary);
        *out_ << j.dump(2) << '\n';
        return kOk;
    }

    // -- inject-twa ------------------------------------------------------------------
    struct {
        std::string manifest, out_dir, token = "auto";
        std::size_t m = 0;
        bool first_m = false, force = false;
        SchemeFlags scheme;
    } twa_;

    void add_inject_twa() {
        auto* cmd = command("inject-twa", "Prefix an activation token to M captions and watermark their images",
                            [this] { return cmd_inject_twa(); });
        cmd->add_option("--manifest", twa_.manifest, "Dataset manifest (JSONL)")->required()->check(CLI::ExistingFile);
        cmd->add_option("--out-dir", twa_.out_dir, "Release directory")->required();
        cmd->add_option("--token", twa_.token, "Activation token, or 'auto' to construct an unused one");
        cmd->add_option("--m", twa_.m, "Number of pairs to modify");
        cmd->add_flag("--first-m", twa_.first_m, "Modify the first M pairs instead of a uniform sample");
        cmd->add_flag("--force", twa_.force, "Replace an existing release");
        twa_.scheme.attach(cmd);
    }

    int cmd_inject_twa() {
        const auto manifest = load_manifest(twa_.manifest);
        std::string token = twa_.token;
        if (token == "auto") {
            const TokenStats stats = manifest.size() ? token_frequencies(manifest) : TokenStats{};
            token = construct_new_token(split(seed(), "twa-token"), stats);
        }
        const auto scheme = twa_.scheme.build(split(seed(), "twa-scheme"));
        const Release release =
            inject_twa(manifest, token, twa_.m, scheme, split(seed(), "twa"), twa_.out_dir,
                       twa_.first_m ? TwaSelection::FirstM : TwaSelection::Uniform, ReleaseOptions{twa_.force});
        Json j;
        j["config"] = run_config();
        j["token"] = token;
        j["scheme"] = scheme_to_json(scheme);
        j["report"] = report_to_json(release.report);
        j["warnings"] = release.warnings;
        detail::write_json(j, release.dir / "report.json");
        *out_ << j.dump(2) << '\n';
        return kOk;
    }

    // -- train-detector --------------------------------------------------------------
    struct {
        std::string out;
        DetectorTrainingConfig cfg;
        PoolFlags pool;
    } train_;

    void add_train_detector() {
        auto* cmd = command("train-detector", "Train the watermark detector on substitute-model generations",
                            [this] { return cmd_train_detector(); });
        cmd->add_option("--out", train_.out, "Detector JSON output")->required();
        cmd->add_option("--substitutes", train_.cfg.substitutes, "Substitute models");
        cmd->add_option("--per-class", train_.cfg.per_class, "Images per class per substitute");
        cmd->add_option("--epochs", train_.cfg.epochs, "Gradient-descent epochs");
        cmd->add_option("--lr", train_.cfg.learning_rate, "Learning rate");
        cmd->add_option("--width", train_.cfg.width, "Render width");
        cmd->add_option("--height", train_.cfg.height, "Render height");
        cmd->add_option("--stub", train_.cfg.prompt_stub, "Prompt stub");
        train_.pool.attach(cmd);
    }

    int cmd_train_detector() {
        const auto pool = train_.pool.resolve(nullptr);
        const auto samples = substitute_training_set(pool, train_.cfg, split(seed(), "detector"));
        const auto result = train_detector(samples, train_.cfg.epochs, train_.cfg.learning_rate);
        Json j = detector_to_json(result.detector);
        j["config"] = run_config();
        j["training"] = {{"samples", samples.size()},
                         {"final_loss", result.loss_trace.empty() ? 0.0 : result.loss_trace.back()},
                         {"accuracy", accuracy(result.detector, samples)}};
        detail::write_json(j, train_.out);
        Json summary;
        summary["detector"] = train_.out;
        summary["training"] = j["training"];
        *out_ << summary.dump(2) << '\n';
        return kOk;
    }

    // -- probe / trace ---------------------------------------------------------------
    struct {
        std::string detector, token;
        OracleFlags oracle;
        ProbeFlags probe;
    } probe_;

    void add_probe() {
        auto* cmd = command("probe", "Probe one token against a suspect model", [this] { return cmd_probe(); });
        cmd->add_option("--detector", probe_.detector, "Detector JSON")->required()->check(CLI::ExistingFile);
        cmd->add_option("--token", probe_.token, "Token to probe")->required();
        probe_.oracle.attach(cmd);
        probe_.probe.attach(cmd);
    }

    static Detector read_detector(const std::string& path) {
        std::ifstream in(path);
        Json j;
        try {
            j = Json::parse(in);
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorKind::InvalidArgument, std::string("detector: ") + e.what());
        }
        return detector_from_json(j);
    }

    int cmd_probe() {
        const auto detector = read_detector(probe_.detector);
        const auto ledger = load_ledger(probe_.oracle.ledger);
        const auto model = probe_.oracle.build(ledger, seed());
        const auto cfg = probe_.probe.config();
        const std::size_t votes = probe_votes(*model, probe_.token, cfg, detector, split(seed(), "probe"));
        Json j;
        j["config"] = run_config();
        j["token"] = probe_.token;
        j["votes"] = votes;
        j["K"] = cfg.generations;
        j["tau"] = cfg.tau;
        j["triggered"] = votes_pass(votes, cfg);
        *out_ << j.dump(2) << '\n';
        return kOk;
    }

    struct {
        std::string detector, out;
        std::vector<std::string> pool;
        OracleFlags oracle;
        ProbeFlags probe;
    } trace_;

    void add_trace() {
        auto* cmd = command("trace", "Trace a suspect model back to a ledger user", [this] { return cmd_trace(); });
        cmd->add_option("--detector", trace_.detector, "Detector JSON")->required()->check(CLI::ExistingFile);
        cmd->add_option("--pool", trace_.pool, "Candidate tokens (default: every ledger token)")->delimiter(',');
        cmd->add_option("--out", trace_.out, "Write the trace JSON here");
        trace_.oracle.attach(cmd);
        trace_.probe.attach(cmd);
    }

    int cmd_trace() {
        const auto detector = read_detector(trace_.detector);
        const auto ledger = load_ledger(trace_.oracle.ledger);
        CandidatePool pool{trace_.pool, {}};
        if (pool.tokens.empty()) {
            std::set<std::string> all;
            for (const auto& e : ledger) all.insert(e.token_set.tokens.begin(), e.token_set.tokens.end());
            pool.tokens.assign(all.begin(), all.end());
        }
        const auto model = trace_.oracle.build(ledger, seed());
        const auto report = trace_leaker(*model, pool, ledger, detector, trace_.probe.config(), split(seed(), "probe"));
        Json j = trace_report_to_json(report);
        j["config"] = run_config();
        if (!trace_.out.empty()) detail::write_json(j, trace_.out);
        *out_ << j.dump(2) << '\n';
        return kOk;
    }

    // -- degrade ---------------------------------------------------------------------
    struct {
        std::string manifest, out_dir, kind = "jpeg", noise_scale = "8bit";
        int quality = 5;
        double factor = 10.0, mean = 0.0, variance = 1.0, sigma = 1.0;
        std::size_t down_w = 256, down_h = 256;
        bool force = false;
    } degrade_;

    DegradeSpec degrade_spec() const {
        const auto& d = degrade_;
        if (d.kind == "jpeg") return JpegSpec{d.quality};
        if (d.kind == "sharpen") return SharpenSpec{d.factor};
        if (d.kind == "noise")
            return GaussianNoiseSpec{d.mean, d.variance, split(seed(), "degrade-noise"),
                                     d.noise_scale == "unit" ? NoiseScale::Unit : NoiseScale::EightBit};
        if (d.kind == "blur") return GaussianBlurSpec{d.sigma};
        return ResizeRoundtripSpec{d.down_w, d.down_h};
    }

    void add_degrade() {
        auto* cmd = command("degrade", "Apply one transmission damage to every image of a release",
                            [this] { return cmd_degrade(); });
        cmd->add_option("--manifest", degrade_.manifest, "Release manifest")->required()->check(CLI::ExistingFile);
        cmd->add_option("--out-dir", degrade_.out_dir, "Output release directory")->required();
        cmd->add_option("--kind", degrade_.kind, "jpeg, sharpen, noise, blur or resize")
            ->check(CLI::IsMember({"jpeg", "sharpen", "noise", "blur", "resize"}));
        cmd->add_option("--quality", degrade_.quality, "JPEG quality")->check(CLI::Range(1, 100));
        cmd->add_option("--factor", degrade_.factor, "Sharpness factor");
        cmd->add_option("--mean", degrade_.mean, "Noise mean");
        cmd->add_option("--variance", degrade_.variance, "Noise variance");
        cmd->add_option("--noise-scale", degrade_.noise_scale, "Scale of noise parameters: 8bit or unit")
            ->check(CLI::IsMember({"8bit", "unit"}));
        cmd->add_option("--blur-sigma", degrade_.sigma, "Blur standard deviation");
        cmd->add_option("--down-w", degrade_.down_w, "Resize intermediate width")->check(CLI::PositiveNumber);
        cmd->add_option("--down-h", degrade_.down_h, "Resize intermediate height")->check(CLI::PositiveNumber);
        cmd->add_flag("--force", degrade_.force, "Replace an existing output release");
    }

    int cmd_degrade() {
        const auto release = load_manifest(degrade_.manifest);
        const auto spec = degrade_spec();
        const auto out = degrade_release(release, spec, degrade_.out_dir, ReleaseOptions{degrade_.force});
        Json j;
        j["config"] = run_config();
        j["damage"] = degrade_name(spec);
        j["parameters"] = degrade_parameters(spec);
        j["images"] = out.size();
        j["manifest"] = (fs::path(degrade_.out_dir) / "manifest.jsonl").string();
        detail::write_json(j, fs::path(degrade_.out_dir) / "degrade.json");
        *out_ << j.dump(2) << '\n';
        return kOk;
    }

    // -- simulate --------------------------------------------------------------------
    struct {
        std::string detector, out;
        bool json = false;
        TrackingConfig cfg;
        PoolFlags pool;
        ProbeFlags probe;
    } sim_;

    void add_simulate() {
        auto* cmd = command("simulate", "Multi-user tracking experiment against simulated backdoored models",
                            [this] { return cmd_simulate(); });
        cmd->add_option("--users", sim_.cfg.users, "Number of data users T");
        cmd->add_option("--min-tokens", sim_.cfg.min_tokens, "Smallest token set L");
        cmd->add_option("--max-tokens", sim_.cfg.max_tokens, "Largest token set R");
        cmd->add_option("--q", sim_.cfg.q, "Trigger fidelity")->check(CLI::Range(0.0, 1.0));
        cmd->add_option("--r", sim_.cfg.r, "False watermark rate")->check(CLI::Range(0.0, 1.0));
        cmd->add_option("--width", sim_.cfg.width, "Render width");
        cmd->add_option("--height", sim_.cfg.height, "Render height");
        cmd->add_option("--substitutes", sim_.cfg.detector.substitutes, "Substitute models for detector training");
        cmd->add_option("--per-class", sim_.cfg.detector.per_class, "Training images per class per substitute");
        cmd->add_option("--detector", sim_.detector, "Use this detector instead of training one")
            ->check(CLI::ExistingFile);
        cmd->add_option("--out", sim_.out, "Write the JSON report here");
        cmd->add_flag("--json", sim_.json, "Print JSON instead of a table");
        sim_.pool.attach(cmd);
        sim_.probe.attach(cmd);
    }

    int cmd_simulate() {
        const auto pool = sim_.pool.resolve(nullptr);
        TrackingConfig cfg = sim_.cfg;
        cfg.probe = sim_.probe.config();
        cfg.detector.width = cfg.width;
        cfg.detector.height = cfg.height;
        std::optional<Detector> preset;
        if (!sim_.detector.empty()) preset = read_detector(sim_.detector);
        const auto report = run_tracking_experiment(pool, cfg, split(seed(), "simulate"), preset ? &*preset : nullptr);
        Json j = tracking_report_to_json(report);
        j["config"] = run_config();
        emit(j, sim_.out, sim_.json, tracking_table(report));
        return kOk;
    }

    // -- eval ------------------------------------------------------------------------
    struct {
        std::string originals, release_dir, ledger, detector, out_dir, out, noise_scale = "8bit";
        std::uint64_t user = 1;
        double floor = 0.5;
        bool json = false, force = false;
    } eval_;

    void add_eval() {
        auto* cmd = command("eval", "Detection accuracy of a release under the five transmission damages",
                            [this] { return cmd_eval(); });
        cmd->add_option("--originals", eval_.originals, "Clean dataset manifest")->required()->check(CLI::ExistingFile);
        cmd->add_option("--release-dir", eval_.release_dir, "Watermarked release directory")
            ->required()
            ->check(CLI::ExistingDirectory);
        cmd->add_option("--ledger", eval_.ledger, "Ledger holding the release's key")->required()->check(CLI::ExistingFile);
        cmd->add_option("--user", eval_.user, "Ledger user id of the release");
        cmd->add_option("--detector", eval_.detector, "Detector JSON")->check(CLI::ExistingFile);
        cmd->add_option("--out-dir", eval_.out_dir, "Where the degraded releases go")->required();
        cmd->add_option("--floor", eval_.floor, "Informed-score floor reported per damage");
        cmd->add_option("--noise-scale", eval_.noise_scale, "Scale of noise parameters: 8bit or unit")
            ->check(CLI::IsMember({"8bit", "unit"}));
        cmd->add_option("--out", eval_.out, "Write the JSON table here");
        cmd->add_flag("--json", eval_.json, "Print JSON instead of a table");
        cmd->add_flag("--force", eval_.force, "Replace existing degraded releases");
    }

    int cmd_eval() {
        const auto originals = load_manifest(eval_.originals);
        const auto ledger = load_ledger(eval_.ledger);
        const LedgerEntry* entry = nullptr;
        for (const auto& e : ledger)
            if (e.user_id == eval_.user) entry = &e;
        if (!entry) throw Error(ErrorKind::InvalidArgument, "user " + std::to_string(eval_.user) + " is not in the ledger");
        const auto* key = std::get_if<DwtKey>(&entry->scheme);
        if (!key) throw Error(ErrorKind::InvalidArgument, "eval needs a dwt-scheme release");
        Release release;
        release.dir = eval_.release_dir;
        release.manifest = load_manifest(release.manifest_path());
        release.report = entry->report;
        std::optional<Detector> detector;
        if (!eval_.detector.empty()) detector = read_detector(eval_.detector);
        auto specs = default_degradations(split(seed(), "eval-noise"));
        if (eval_.noise_scale == "unit") std::get<GaussianNoiseSpec>(specs[2]).scale = NoiseScale::Unit;
        const auto table = evaluate_robustness(originals, release, *key, detector ? &*detector : nullptr, specs,
                                               eval_.out_dir, eval_.floor, ReleaseOptions{eval_.force});
        Json j = robustness_to_json(table);
        j["config"] = run_config();
        emit(j, eval_.out, eval_.json, robustness_text(table));
        return kOk;
    }

    CLI::App app_;
    std::uint64_t seed_ = 0;
    std::string config_path_;
    std::map<std::string, std::function<int()>> handlers_;
    CLI::App* active_ = nullptr;
    std::ostream* out_ = &std::cout;
};

inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    Cli cli;
    return cli.run(args, out, err);
}

} // namespace tracemark::cli

// flowsel: frame selection, oracle verification and the toy adaptation
// experiments from the command line.
//
// Every command resolves its configuration as defaults < FLOWSEL_SEED (seed
// only) < --config JSON < explicit flags, and embeds the result in what it
// writes. Exit codes: 0 success, 1 a requested check failed, 2 bad input.

#include "flowsel/error.hpp"
#include "flowsel/features.hpp"
#include "flowsel/gradsuite.hpp"
#include "flowsel/io.hpp"
#include "flowsel/manifest.hpp"
#include "flowsel/oracles.hpp"
#include "flowsel/rng.hpp"
#include "flowsel/sampler.hpp"
#include "flowsel/scenegen.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using nlohmann::json;
using namespace flowsel;

namespace {

constexpr int kFormatVersion = 1;

struct UsageError : Error {
    using Error::Error;
};

// One flag that may override a config key.
struct Flag {
    std::string key;
    CLI::Option* opt;
    std::string raw;
};

class Command {
public:
    Command(CLI::App& app, const std::string& name, const std::string& about, json defaults)
        : sub_(app.add_subcommand(name, about)), cfg_(std::move(defaults)) {
        cfg_["command"] = name;
    }

    CLI::App* app() { return sub_; }

    Flag& flag(const std::string& name, const std::string& key, const std::string& help) {
        flags_.push_back(std::make_unique<Flag>(Flag{key, nullptr, {}}));
        Flag& f = *flags_.back();
        f.opt = sub_->add_option(name, f.raw, help);
        return f;
    }

    /// Defaults, then the seed fallback, then the config file, then flags.
    /// Each flag's raw text is converted by parse(key, text).
    json resolve(const std::string& config_path, const std::function<json(const std::string&, const std::string&)>& parse) {
        json cfg = cfg_;
        if (const char* env = std::getenv("FLOWSEL_SEED"); env && cfg.contains("seed"))
            cfg["seed"] = parse_seed(env, "FLOWSEL_SEED");
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw UsageError("cannot read config " + config_path);
            json file;
            try {
                file = json::parse(in);
            } catch (const json::exception& e) {
                throw UsageError("config " + config_path + ": " + e.what());
            }
            if (!file.is_object()) throw UsageError("config must be a JSON object");
            for (const auto& [k, v] : file.items()) {
                if (k == "command") continue;
                if (!cfg.contains(k)) throw UsageError("unknown config key '" + k + "' for " + cfg["command"].get<std::string>());
                cfg[k] = v;
            }
        }
        for (const auto& f : flags_)
            if (f->opt->count() > 0) cfg[f->key] = parse(f->key, f->raw);
        return cfg;
    }

    static std::uint64_t parse_seed(const std::string& text, const std::string& what) {
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(text, &used, 0);
            if (used != text.size() || text.find('-') != std::string::npos) throw std::invalid_argument(text);
            return v;
        } catch (const std::exception&) {
            throw UsageError(what + " must be an unsigned integer, got '" + text + "'");
        }
    }

private:
    CLI::App* sub_;
    json cfg_;
    std::vector<std::unique_ptr<Flag>> flags_;
};

double parse_double(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw UsageError(what + " must be a number, got '" + text + "'");
    }
}

std::size_t parse_count(const std::string& text, const std::string& what) {
    return static_cast<std::size_t>(Command::parse_seed(text, what));
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

// "lo,hi" or a single value.
json parse_range(const std::string& text, const std::string& what) {
    const auto parts = split(text, ',');
    if (parts.empty() || parts.size() > 2) throw UsageError(what + " must be 'lo,hi'");
    const std::size_t lo = parse_count(parts[0], what);
    const std::size_t hi = parts.size() == 2 ? parse_count(parts[1], what) : lo;
    if (lo > hi) throw UsageError(what + " is empty");
    return json::array({lo, hi});
}

json default_weights() {
    const auto& w = WeightVector::kDefault;
    return json::array({w[0], w[1], w[2], w[3]});
}

WeightVector weights_of(const json& cfg) {
    const auto w = cfg.at("weights").get<std::vector<double>>();
    if (w.size() != 4) throw UsageError("weights need four entries");
    return WeightVector({w[0], w[1], w[2], w[3]});
}

std::string number(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
    return std::string(buf, end);
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        std::cout.flush();
    } else {
        write_file_atomic(path, text);
    }
}

std::string csv_header(const json& cfg) {
    return "# format_version: " + std::to_string(kFormatVersion) + "\n# config: " + cfg.dump() + "\n";
}

// Shared conversion for the toy experiment knobs.
json parse_common(const std::string& key, const std::string& raw) {
    if (key == "ratio") return parse_double(raw, "--ratio");
    if (key == "steps" || key == "seeds" || key == "instances") return parse_count(raw, "--" + key);
    if (key == "seed") return Command::parse_seed(raw, "--seed");
    if (key == "weights") {
        const auto w = WeightVector::parse(raw).values();
        return json::array({w[0], w[1], w[2], w[3]});
    }
    if (key == "strategies") {
        json out = json::array();
        for (const auto& s : split(raw, ',')) out.push_back(std::string(to_string(parse_strategy(s))));
        return out;
    }
    if (key == "ratios") {
        json out = json::array();
        for (const auto& s : split(raw, ',')) out.push_back(parse_double(s, "--ratios"));
        return out;
    }
    if (key == "n_range") return parse_range(raw, "--n-range");
    if (key == "m_range") return parse_range(raw, "--m-range");
    if (key == "ops") return json(split(raw, ','));
    return raw;
}

json experiment_defaults() {
    const toy::ExperimentConfig d;
    return {
        {"preset", d.preset},
        {"strategies", json::array({"wgs"})},
        {"seeds", d.seeds},
        {"seed", d.base_seed},
        {"steps", d.adapt.steps},
        {"train_frames", d.train_frames},
        {"eval_frames", d.eval_frames},
        {"batch", d.adapt.batch},
        {"lr", d.adapt.lr},
        {"momentum", d.adapt.momentum},
        {"eval_every", d.adapt.eval_every},
        {"pretrain_steps", d.pretrain.steps},
        {"pretrain_seed", d.pretrain.seed},
        {"weights", default_weights()},
        {"out", "-"},
    };
}

toy::ExperimentConfig experiment_of(const json& cfg) {
    toy::ExperimentConfig e;
    e.preset = cfg.at("preset").get<std::string>();
    toy::preset(e.preset);
    e.strategies.clear();
    for (const auto& s : cfg.at("strategies")) e.strategies.push_back(parse_strategy(s.get<std::string>()));
    if (e.strategies.empty()) throw UsageError("no strategy given");
    if (cfg.contains("ratio")) e.alpha = cfg.at("ratio").get<double>();
    e.seeds = cfg.at("seeds").get<std::size_t>();
    e.base_seed = cfg.at("seed").get<std::uint64_t>();
    e.train_frames = cfg.at("train_frames").get<std::size_t>();
    e.eval_frames = cfg.at("eval_frames").get<std::size_t>();
    e.adapt.steps = cfg.at("steps").get<std::size_t>();
    e.adapt.batch = cfg.at("batch").get<std::size_t>();
    e.adapt.lr = cfg.at("lr").get<double>();
    e.adapt.momentum = cfg.at("momentum").get<double>();
    e.adapt.eval_every = cfg.at("eval_every").get<std::size_t>();
    e.adapt.weights = weights_of(cfg);
    e.pretrain.steps = cfg.at("pretrain_steps").get<std::size_t>();
    e.pretrain.seed = cfg.at("pretrain_seed").get<std::uint64_t>();
    if (e.adapt.steps == 0 || e.adapt.batch == 0) throw UsageError("steps and batch must be positive");
    return e;
}

int run_select(const json& cfg) {
    const std::string manifest = cfg.at("manifest").get<std::string>();
    if (manifest.empty()) throw UsageError("select needs a manifest path");
    const auto mode_name = cfg.at("timestamp_mode").get<std::string>();
    if (mode_name != "relative" && mode_name != "absolute")
        throw UsageError("--timestamp-mode must be relative or absolute");
    const TimestampMode mode = mode_name == "relative" ? TimestampMode::relative : TimestampMode::absolute;

    const auto frames = read_manifest(std::filesystem::path(manifest));
    const auto sel = select_ratio(frames, cfg.at("ratio").get<double>(), weights_of(cfg), mode);

    json ids = json::array();
    for (std::size_t i : sel.indices) ids.push_back(frames[i].id);
    const json out = {
        {"format_version", kFormatVersion},
        {"config", cfg},
        {"n", frames.size()},
        {"m", sel.m},
        {"ids", ids},
        {"indices", sel.indices},
        {"coverage_radius", sel.coverage_radius},
        {"radius_trace", sel.radius_trace},
    };
    const std::string path = cfg.at("out").get<std::string>();
    emit(path, out.dump(2) + "\n");
    (path == "-" ? std::cerr : std::cout) << "coverage_radius " << number(sel.coverage_radius) << "\n";
    return 0;
}

double binomial(std::size_t n, std::size_t k) {
    double c = 1.0;
    for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
    return c;
}

int run_verify(const json& cfg) {
    const auto nr = cfg.at("n_range").get<std::vector<std::size_t>>();
    const auto mr = cfg.at("m_range").get<std::vector<std::size_t>>();
    if (nr.size() != 2 || mr.size() != 2 || nr[0] > nr[1] || mr[0] > mr[1] || nr[0] == 0 || mr[0] == 0)
        throw UsageError("ranges must be 'lo,hi' with 1 <= lo <= hi");
    if (mr[0] > nr[1]) throw UsageError("m range exceeds every n");
    for (std::size_t n = nr[0]; n <= nr[1]; ++n)
        for (std::size_t m = mr[0]; m <= std::min(mr[1], n); ++m)
            if (binomial(n, m) > static_cast<double>(kMaxSubsets) || n * m > kMaxTransportCells)
                throw InstanceTooLarge("brute-force budget exceeded at n = " + std::to_string(n) +
                                       ", m = " + std::to_string(m));

    const std::size_t instances = cfg.at("instances").get<std::size_t>();
    const std::uint64_t seed = cfg.at("seed").get<std::uint64_t>();
    const WeightVector w = weights_of(cfg);

    std::string text = json{{"type", "header"}, {"format_version", kFormatVersion}, {"config", cfg}}.dump() + "\n";
    std::size_t violations = 0, ratio_violations = 0, winf_violations = 0;
    double max_ratio = 0.0, sum_ratio = 0.0;
    for (std::size_t k = 0; k < instances; ++k) {
        Rng rng(derive_seed(seed, k));
        const std::size_t n = nr[0] + rng.below(nr[1] - nr[0] + 1);
        const std::size_t m_hi = std::min(mr[1], n);
        const std::size_t m = mr[0] + rng.below(m_hi - mr[0] + 1);
        std::vector<FrameRecord> frames(n);
        for (std::size_t i = 0; i < n; ++i) {
            frames[i].id = std::to_string(i);
            frames[i].t_us = static_cast<std::int64_t>(rng.below(10'000'000));
            frames[i].pose = {rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0), 0.0};
        }
        const auto r = verify_instance(extract_features(frames), w, m);
        const bool ratio_ok = r.ratio <= 2.0 + kBoundSlack;
        violations += !r.bound_holds;
        ratio_violations += !ratio_ok;
        winf_violations += !(r.w_inf <= r.greedy_radius + kBoundSlack);
        max_ratio = std::max(max_ratio, r.ratio);
        sum_ratio += r.ratio;
        text += json{{"type", "instance"},
                     {"index", k},
                     {"n", r.n},
                     {"m", r.m},
                     {"greedy_indices", r.greedy_indices},
                     {"optimal_subset", r.optimal_subset},
                     {"greedy_radius", r.greedy_radius},
                     {"optimal_radius", r.optimal_radius},
                     {"ratio", r.ratio},
                     {"w_inf", r.w_inf},
                     {"w1", r.w1},
                     {"w2", r.w2},
                     {"bound_holds", r.bound_holds}}
                    .dump() +
                "\n";
    }
    const json summary = {
        {"type", "summary"},
        {"instances", instances},
        {"violations", violations},
        {"ratio_violations", ratio_violations},
        {"winf_violations", winf_violations},
        {"max_ratio", instances ? json(max_ratio) : json(nullptr)},
        {"mean_ratio", instances ? json(sum_ratio / static_cast<double>(instances)) : json(nullptr)},
    };
    text += summary.dump() + "\n";
    const std::string path = cfg.at("out").get<std::string>();
    emit(path, text);
    if (path != "-") std::cout << summary.dump() << "\n";
    return violations == 0 ? 0 : 1;
}

int run_toy(const json& cfg) {
    const auto e = experiment_of(cfg);
    const auto rows = toy::run_experiment(e);
    std::string text = csv_header(cfg);
    text += "strategy,alpha,seed,step,train_mse,eval_mse,coverage_radius,trainable_fraction\n";
    for (const auto& r : rows)
        text += r.strategy + "," + number(r.alpha) + "," + std::to_string(r.seed) + "," + std::to_string(r.step) + "," +
                number(r.train_mse) + "," + number(r.eval_mse) + "," + number(r.coverage_radius) + "," +
                number(r.trainable_fraction) + "\n";
    emit(cfg.at("out").get<std::string>(), text);
    return 0;
}

int run_sweep(const json& cfg) {
    const auto e = experiment_of(cfg);
    const auto ratios = cfg.at("ratios").get<std::vector<double>>();
    const auto rows = toy::run_sweep(e, ratios);
    std::string text = csv_header(cfg);
    text += "strategy,seed,ratio,coverage_radius,eval_mse,plateau_ratio\n";
    for (const auto& r : rows)
        text += r.strategy + "," + std::to_string(r.seed) + "," + number(r.ratio) + "," + number(r.coverage_radius) +
                "," + number(r.eval_mse) + "," + number(r.plateau_ratio) + "\n";
    emit(cfg.at("out").get<std::string>(), text);
    return 0;
}

int run_gradcheck(const json& cfg) {
    auto ops = cfg.at("ops").get<std::vector<std::string>>();
    if (ops.empty()) throw UsageError("no ops given");
    if (ops.size() == 1 && ops[0] == "all") ops = nn::grad_case_names();
    const auto results = nn::run_grad_cases(ops, cfg.at("seed").get<std::uint64_t>());
    std::string text = json{{"type", "header"}, {"format_version", kFormatVersion}, {"config", cfg}}.dump() + "\n";
    std::size_t failures = 0;
    for (const auto& r : results) {
        failures += !r.pass;
        text += json{{"type", "op"},
                     {"name", r.name},
                     {"max_rel_error", finite_or_null(r.max_rel_error)},
                     {"params", r.params},
                     {"coords", r.checked},
                     {"pass", r.pass}}
                    .dump() +
                "\n";
    }
    text += json{{"type", "summary"}, {"ops", results.size()}, {"failures", failures}, {"tolerance", nn::kGradTolerance}}
                .dump() +
            "\n";
    emit("-", text);
    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coverage-driven frame selection and adapter experiments"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    app.add_option("--config", config_path, "JSON file with defaults for the command; flags win");

    Command select(app, "select", "Select a subset of a JSONL manifest",
                   {{"manifest", ""}, {"ratio", 0.2}, {"weights", default_weights()}, {"timestamp_mode", "relative"},
                    {"out", "-"}, {"seed", 0}});
    std::string manifest;
    select.app()->add_option("manifest", manifest, "JSONL manifest");
    select.flag("--ratio", "ratio", "fraction of frames to keep, in (0, 1]");
    select.flag("--weights", "weights", "w_t,w_x,w_y,w_s");
    select.flag("--timestamp-mode", "timestamp_mode", "relative|absolute");
    select.flag("--out", "out", "output JSON path ('-' for stdout)");

    Command verify(app, "verify", "Check greedy selection against exact oracles on random instances",
                   {{"instances", 200}, {"n_range", {6, 12}}, {"m_range", {2, 4}}, {"seed", 0},
                    {"weights", default_weights()}, {"out", "-"}});
    verify.flag("--instances", "instances", "number of random instances");
    verify.flag("--n-range", "n_range", "lo,hi points per instance");
    verify.flag("--m-range", "m_range", "lo,hi selection budget");
    verify.flag("--seed", "seed", "base seed");
    verify.flag("--out", "out", "output JSONL path ('-' for stdout)");

    json toy_defaults = experiment_defaults();
    toy_defaults["ratio"] = 0.2;
    Command toy(app, "toy", "Adapt the toy pipeline on a selected subset", toy_defaults);
    toy.flag("--preset", "preset", "redundancy|plain");
    toy.flag("--strategy", "strategies", "wgs|random|uniform, comma separated");
    toy.flag("--ratio", "ratio", "fraction of training frames to select");
    toy.flag("--steps", "steps", "optimizer steps per run");
    toy.flag("--seeds", "seeds", "number of paired seeds");
    toy.flag("--out", "out", "output CSV path ('-' for stdout)");

    json sweep_defaults = experiment_defaults();
    sweep_defaults["ratios"] = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    sweep_defaults["steps"] = 60;
    Command sweep(app, "sweep", "Run the toy experiment over a list of ratios", sweep_defaults);
    sweep.flag("--ratios", "ratios", "comma separated ratios");
    sweep.flag("--strategy", "strategies", "wgs|random|uniform, comma separated");
    sweep.flag("--out", "out", "output CSV path ('-' for stdout)");

    Command grad(app, "gradcheck", "Finite-difference checks of every op and block", {{"ops", {"all"}}, {"seed", 0}});
    grad.flag("--ops", "ops", "all, or a comma separated list of op names");
    grad.flag("--seed", "seed", "seed for inputs and probed coordinates");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        if (*select.app()) {
            json cfg = select.resolve(config_path, parse_common);
            if (!manifest.empty()) cfg["manifest"] = manifest;
            return run_select(cfg);
        }
        if (*verify.app()) return run_verify(verify.resolve(config_path, parse_common));
        if (*toy.app()) return run_toy(toy.resolve(config_path, parse_common));
        if (*sweep.app()) return run_sweep(sweep.resolve(config_path, parse_common));
        if (*grad.app()) return run_gradcheck(grad.resolve(config_path, parse_common));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}

// SPDX-License-Identifier: Apache-2.0
#include "beamalign/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "beamalign/errors.hpp"

namespace beamalign::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

unsigned default_threads()
{
    return std::max(1U, std::thread::hardware_concurrency());
}

void reject_unknown(const ordered_json& j, const std::set<std::string>& allowed)
{
    if (!j.is_object()) {
        throw ConfigError("<root>", "config must be a JSON object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!allowed.contains(key)) {
            throw ConfigError(key, "unknown key");
        }
    }
    if (j.contains("schema_version") && j["schema_version"] != kSchemaVersion) {
        throw ConfigError("schema_version", "unsupported version (expected " + std::to_string(kSchemaVersion) + ")");
    }
}

double get_number(const ordered_json& j, const std::string& key, double fallback)
{
    if (!j.contains(key)) {
        return fallback;
    }
    const ordered_json& v = j[key];
    if (!v.is_number()) {
        throw ConfigError(key, "expected a number");
    }
    return v.get<double>();
}

std::uint64_t get_count(const ordered_json& j, const std::string& key, std::uint64_t fallback)
{
    if (!j.contains(key)) {
        return fallback;
    }
    const ordered_json& v = j[key];
    if (v.is_number_unsigned()) {
        return v.get<std::uint64_t>();
    }
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    }
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (d >= 0 && d == std::floor(d) && d < 9.0e15) {
            return static_cast<std::uint64_t>(d);
        }
    }
    throw ConfigError(key, "expected a non-negative integer");
}

int get_int(const ordered_json& j, const std::string& key, int fallback)
{
    const std::uint64_t v = get_count(j, key, static_cast<std::uint64_t>(std::max(fallback, 0)));
    if (v > 1000000) {
        throw ConfigError(key, "value out of range");
    }
    return static_cast<int>(v);
}

bool get_bool(const ordered_json& j, const std::string& key, bool fallback)
{
    if (!j.contains(key)) {
        return fallback;
    }
    if (!j[key].is_boolean()) {
        throw ConfigError(key, "expected true or false");
    }
    return j[key].get<bool>();
}

std::string get_string(const ordered_json& j, const std::string& key, const std::string& fallback)
{
    if (!j.contains(key)) {
        return fallback;
    }
    if (!j[key].is_string()) {
        throw ConfigError(key, "expected a string");
    }
    return j[key].get<std::string>();
}

template <class T, class Get>
std::vector<T> get_list(const ordered_json& j, const std::string& key, std::vector<T> fallback, Get get_one)
{
    if (!j.contains(key)) {
        return fallback;
    }
    const ordered_json& v = j[key];
    std::vector<T> out;
    if (!v.is_array()) {
        out.push_back(get_one(j, key));
        return out;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
        ordered_json wrapper = ordered_json::object();
        wrapper[key] = v[i];
        out.push_back(get_one(wrapper, key));
    }
    return out;
}

std::vector<double> get_numbers(const ordered_json& j, const std::string& key, std::vector<double> fallback)
{
    return get_list<double>(j, key, std::move(fallback),
                            [](const ordered_json& w, const std::string& k) { return get_number(w, k, 0.0); });
}

std::vector<int> get_ints(const ordered_json& j, const std::string& key, std::vector<int> fallback)
{
    return get_list<int>(j, key, std::move(fallback),
                         [](const ordered_json& w, const std::string& k) { return get_int(w, k, 0); });
}

std::vector<std::string> get_strings(const ordered_json& j, const std::string& key,
                                     std::vector<std::string> fallback)
{
    return get_list<std::string>(j, key, std::move(fallback),
                                 [](const ordered_json& w, const std::string& k) { return get_string(w, k, ""); });
}

const std::set<std::string> kPriorKeys = {"prior", "prior_start", "prior_length", "prior_mass", "prior_table"};

PriorSpec prior_from_json(const ordered_json& j)
{
    const std::string kind = get_string(j, "prior", "uniform");
    const PriorSpec mix = PriorSpec::default_mixture();
    if (kind == "uniform") {
        return PriorSpec::uniform();
    }
    try {
        if (kind == "mixture") {
            const Beam arc = Beam::make(get_number(j, "prior_start", mix.interval.start),
                                        get_number(j, "prior_length", mix.interval.length));
            return PriorSpec::mixture(arc, get_number(j, "prior_mass", mix.inner_mass));
        }
        if (kind == "custom") {
            if (!j.contains("prior_table")) {
                throw ConfigError("prior_table", "required for a custom prior");
            }
            return PriorSpec::custom(get_numbers(j, "prior_table", {}));
        }
    } catch (const std::invalid_argument& e) {
        if (dynamic_cast<const ConfigError*>(&e) != nullptr) {
            throw;
        }
        throw ConfigError("prior", e.what());
    }
    throw ConfigError("prior", "unknown prior '" + kind + "' (uniform, mixture, custom)");
}

void prior_to_json(ordered_json& j, const PriorSpec& prior)
{
    j["prior"] = prior.name();
    if (prior.kind == PriorSpec::Kind::mixture) {
        j["prior_start"] = prior.interval.start;
        j["prior_length"] = prior.interval.length;
        j["prior_mass"] = prior.inner_mass;
    } else if (prior.kind == PriorSpec::Kind::custom) {
        j["prior_table"] = prior.table;
    }
}

// Prior problems that only show up against a grid.
void check_prior(const PriorSpec& prior, std::size_t n_bins)
{
    try {
        (void)make_prior(prior, AngularGrid(n_bins));
    } catch (const std::invalid_argument& e) {
        throw ConfigError("prior", e.what());
    }
}

std::set<std::string> with_prior(std::set<std::string> keys)
{
    keys.insert(kPriorKeys.begin(), kPriorKeys.end());
    keys.insert("schema_version");
    return keys;
}

}  // namespace

TrainConfig train_config_from_json(const ordered_json& j)
{
    reject_unknown(j, with_prior({"n_bins", "slots", "epsilon", "raw_snr_db", "batch_size", "steps", "learning_rate",
                                  "grad_clip", "adam_beta1", "adam_beta2", "adam_eps", "tau", "seed", "loss",
                                  "cam_order", "linear_moments", "checkpoint_every", "threads"}));
    TrainConfig c;
    c.n_bins = get_count(j, "n_bins", c.n_bins);
    c.slots = get_int(j, "slots", c.slots);
    c.epsilon = get_number(j, "epsilon", c.epsilon);
    c.prior = prior_from_json(j);
    c.raw_snr_db = get_numbers(j, "raw_snr_db", c.raw_snr_db);
    c.batch_size = get_count(j, "batch_size", c.batch_size);
    c.steps = get_count(j, "steps", c.steps);
    c.learning_rate = get_number(j, "learning_rate", c.learning_rate);
    c.grad_clip = get_number(j, "grad_clip", c.grad_clip);
    c.adam_beta1 = get_number(j, "adam_beta1", c.adam_beta1);
    c.adam_beta2 = get_number(j, "adam_beta2", c.adam_beta2);
    c.adam_eps = get_number(j, "adam_eps", c.adam_eps);
    c.tau = get_number(j, "tau", c.tau);
    c.seed = get_count(j, "seed", c.seed);
    const std::string loss = get_string(j, "loss", "cam");
    const int order = get_int(j, "cam_order", 1);
    if (loss == "cam") {
        c.loss = LossSpec::cam(order);
    } else if (loss == "mmse") {
        c.loss = LossSpec::mmse();
    } else {
        throw ConfigError("loss", "unknown loss '" + loss + "' (cam, mmse)");
    }
    c.moments = get_bool(j, "linear_moments", false) ? MomentMode::linear : MomentMode::circular;
    c.checkpoint_every = get_count(j, "checkpoint_every", c.checkpoint_every);
    c.threads = static_cast<unsigned>(get_count(j, "threads", default_threads()));
    if (c.threads == 0) {
        c.threads = default_threads();
    }
    c.validate();
    check_prior(c.prior, c.n_bins);
    return c;
}

ordered_json to_json(const TrainConfig& c)
{
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["n_bins"] = c.n_bins;
    j["slots"] = c.slots;
    j["epsilon"] = c.epsilon;
    prior_to_json(j, c.prior);
    j["raw_snr_db"] = c.raw_snr_db;
    j["batch_size"] = c.batch_size;
    j["steps"] = c.steps;
    j["learning_rate"] = c.learning_rate;
    j["grad_clip"] = c.grad_clip;
    j["adam_beta1"] = c.adam_beta1;
    j["adam_beta2"] = c.adam_beta2;
    j["adam_eps"] = c.adam_eps;
    j["tau"] = c.effective_tau();
    j["seed"] = c.seed;
    j["loss"] = c.loss.kind == LossSpec::Kind::mmse ? "mmse" : "cam";
    j["cam_order"] = c.loss.order;
    j["linear_moments"] = c.moments == MomentMode::linear;
    j["checkpoint_every"] = c.checkpoint_every;
    j["threads"] = c.threads;
    return j;
}

EvalJob eval_job_from_json(const ordered_json& j, bool sweep)
{
    std::set<std::string> keys = {"n_bins", "slots", "epsilon", "raw_snr_db", "trials", "seed", "linear_moments",
                                  "threads", "policy", "checkpoint", "hpm_depth"};
    if (sweep) {
        keys.insert("figure");
    }
    reject_unknown(j, with_prior(keys));
    EvalJob job;
    EvalConfig& c = job.eval;
    c.n_bins = get_count(j, "n_bins", c.n_bins);
    c.prior = prior_from_json(j);
    c.slots = get_ints(j, "slots", c.slots);
    c.epsilon = get_number(j, "epsilon", c.epsilon);
    c.raw_snr_db = get_numbers(j, "raw_snr_db", c.raw_snr_db);
    c.trials = get_count(j, "trials", c.trials);
    c.seed = get_count(j, "seed", c.seed);
    c.moments = get_bool(j, "linear_moments", false) ? MomentMode::linear : MomentMode::circular;
    c.threads = static_cast<unsigned>(get_count(j, "threads", default_threads()));
    if (c.threads == 0) {
        c.threads = default_threads();
    }
    job.policies = get_strings(j, "policy", job.policies);
    job.checkpoints = get_strings(j, "checkpoint", {});
    job.hpm_depth = get_int(j, "hpm_depth", job.hpm_depth);
    if (sweep) {
        job.figure = get_string(j, "figure", job.figure);
        const bool ok = !job.figure.empty() && std::all_of(job.figure.begin(), job.figure.end(), [](char ch) {
            return std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-';
        });
        if (!ok) {
            throw ConfigError("figure", "must be a plain file stem");
        }
    }
    c.validate();
    check_prior(c.prior, c.n_bins);
    if (c.slots.empty()) {
        throw ConfigError("slots", "needs at least one value");
    }
    if (job.policies.empty()) {
        throw ConfigError("policy", "needs at least one policy");
    }
    std::size_t neural = 0;
    for (const std::string& p : job.policies) {
        if (p == "neural") {
            ++neural;
        } else if (p != "bisection" && p != "hpm") {
            throw ConfigError("policy", "unknown policy '" + p + "' (bisection, hpm, neural)");
        }
    }
    if (neural != job.checkpoints.size()) {
        throw ConfigError("checkpoint", "need one checkpoint per neural policy");
    }
    for (std::string& path : job.checkpoints) {
        path = fs::absolute(path).lexically_normal().string();
    }
    if (job.hpm_depth < 1) {
        throw ConfigError("hpm_depth", "must be >= 1");
    }
    return job;
}

ordered_json to_json(const EvalJob& job, bool sweep)
{
    const EvalConfig& c = job.eval;
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["n_bins"] = c.n_bins;
    prior_to_json(j, c.prior);
    j["slots"] = c.slots;
    j["epsilon"] = c.epsilon;
    j["raw_snr_db"] = c.raw_snr_db;
    j["trials"] = c.trials;
    j["seed"] = c.seed;
    j["linear_moments"] = c.moments == MomentMode::linear;
    j["threads"] = c.threads;
    j["policy"] = job.policies;
    j["checkpoint"] = job.checkpoints;
    j["hpm_depth"] = job.hpm_depth;
    if (sweep) {
        j["figure"] = job.figure;
    }
    return j;
}

DumpJob dump_job_from_json(const ordered_json& j)
{
    reject_unknown(j, with_prior({"n_bins", "slots", "raw_snr_db", "seed", "policy", "checkpoint", "hpm_depth",
                                  "psi", "threads"}));
    DumpJob d;
    d.n_bins = get_count(j, "n_bins", d.n_bins);
    d.prior = prior_from_json(j);
    d.slots = get_int(j, "slots", d.slots);
    d.raw_snr_db = get_number(j, "raw_snr_db", d.raw_snr_db);
    d.seed = get_count(j, "seed", d.seed);
    d.policy = get_string(j, "policy", d.policy);
    d.checkpoint = get_string(j, "checkpoint", "");
    d.hpm_depth = get_int(j, "hpm_depth", d.hpm_depth);
    d.psi = get_number(j, "psi", d.psi);
    if (d.n_bins < 2) {
        throw ConfigError("n_bins", "must be >= 2");
    }
    if (d.policy != "bisection" && d.policy != "hpm" && d.policy != "neural") {
        throw ConfigError("policy", "unknown policy '" + d.policy + "' (bisection, hpm, neural)");
    }
    if ((d.policy == "neural") != !d.checkpoint.empty()) {
        throw ConfigError("checkpoint", "required for, and only for, the neural policy");
    }
    if (!d.checkpoint.empty()) {
        d.checkpoint = fs::absolute(d.checkpoint).lexically_normal().string();
    }
    if (!std::isfinite(d.raw_snr_db)) {
        throw ConfigError("raw_snr_db", "must be finite");
    }
    if (d.hpm_depth < 1) {
        throw ConfigError("hpm_depth", "must be >= 1");
    }
    check_prior(d.prior, d.n_bins);
    return d;
}

ordered_json to_json(const DumpJob& d)
{
    ordered_json j;
    j["schema_version"] = kSchemaVersion;
    j["n_bins"] = d.n_bins;
    prior_to_json(j, d.prior);
    j["slots"] = d.slots;
    j["raw_snr_db"] = d.raw_snr_db;
    j["seed"] = d.seed;
    j["policy"] = d.policy;
    j["checkpoint"] = d.checkpoint;
    j["hpm_depth"] = d.hpm_depth;
    j["psi"] = d.psi;
    return j;
}

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> threads;
    std::optional<std::string> raw_snr_db;
    std::optional<std::string> slots;
    std::optional<std::uint64_t> trials;
    std::optional<std::string> policy;
    std::optional<std::string> loss;
    std::optional<int> cam_order;
    std::optional<std::string> prior;
};

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

ordered_json parse_number_list(const std::string& field, const std::string& text, bool integers)
{
    ordered_json arr = ordered_json::array();
    for (const std::string& item : split_list(text)) {
        std::size_t used = 0;
        try {
            if (integers) {
                const long v = std::stol(item, &used);
                arr.push_back(v);
            } else {
                const double v = std::stod(item, &used);
                arr.push_back(v);
            }
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) {
            throw ConfigError(field, "cannot parse '" + item + "'");
        }
    }
    return arr;
}

ordered_json scalar_if_single(ordered_json arr)
{
    return arr.size() == 1 ? arr[0] : arr;
}

void apply_overrides(ordered_json& j, const Overrides& o)
{
    if (o.seed) {
        j["seed"] = *o.seed;
    }
    if (o.threads) {
        j["threads"] = *o.threads;
    }
    if (o.raw_snr_db) {
        j["raw_snr_db"] = scalar_if_single(parse_number_list("raw_snr_db", *o.raw_snr_db, false));
    }
    if (o.slots) {
        j["slots"] = scalar_if_single(parse_number_list("slots", *o.slots, true));
    }
    if (o.trials) {
        j["trials"] = *o.trials;
    }
    if (o.policy) {
        j["policy"] = scalar_if_single(ordered_json(split_list(*o.policy)));
    }
    if (o.loss) {
        j["loss"] = *o.loss;
    }
    if (o.cam_order) {
        j["cam_order"] = *o.cam_order;
    }
    if (o.prior) {
        j["prior"] = *o.prior;
    }
}

// A run manifest is accepted as a config; its resolved config is replayed.
ordered_json load_config(const std::string& path, const std::string& command)
{
    if (path.empty()) {
        return ordered_json::object();
    }
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("--config", "cannot open '" + path + "'");
    }
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("--config", std::string("invalid JSON: ") + e.what());
    }
    if (j.is_object() && j.contains("command") && j.contains("config")) {
        if (j["command"] != command) {
            throw ConfigError("command", "manifest was written by '" + j["command"].get<std::string>() + "'");
        }
        return j["config"];
    }
    return j;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

void write_manifest(const fs::path& dir, const std::string& command, const ordered_json& config)
{
    ordered_json m;
    m["command"] = command;
    m["tool_version"] = kToolVersion;
    m["seed"] = config.contains("seed") ? config["seed"] : ordered_json(nullptr);
    m["out"] = fs::absolute(dir).lexically_normal().string();
    m["config"] = config;
    write_text(dir / "manifest.json", m.dump(2) + "\n");
}

fs::path prepare_out(const std::string& out)
{
    const fs::path dir = out.empty() ? fs::path("out") : fs::path(out);
    fs::create_directories(dir);
    return dir;
}

std::string checkpoint_digest(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0')
       << fnv1a64({reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()});
    return os.str();
}

int cmd_train(const ordered_json& raw, const fs::path& dir, std::ostream& out)
{
    const TrainConfig cfg = train_config_from_json(raw);
    const ordered_json resolved = to_json(cfg);
    write_manifest(dir, "train", resolved);
    const TrainResult result = train(cfg, [&](std::size_t step, const ScanPolicyNet& net) {
        if (step == cfg.steps) {
            net.save(dir / "checkpoint.bin");
        } else {
            net.save(dir / ("checkpoint_step" + std::to_string(step) + ".bin"));
        }
    });
    std::ostringstream log;
    log << "step,loss,grad_norm,wall_ms\n" << std::setprecision(17);
    for (const TrainLogRow& row : result.log) {
        log << row.step << ',' << row.loss << ',' << row.grad_norm << ',' << std::setprecision(6) << row.wall_ms
            << std::setprecision(17) << '\n';
    }
    write_text(dir / "train_log.csv", log.str());
    out << "trained " << cfg.steps << " steps, N=" << cfg.n_bins << ", final loss "
        << (result.log.empty() ? std::nan("") : result.log.back().loss) << "\n";
    out << "checkpoint " << (dir / "checkpoint.bin").string() << " fnv1a64 "
        << checkpoint_digest(dir / "checkpoint.bin") << "\n";
    return kOk;
}

std::vector<Series> run_eval_job(const EvalJob& job, bool sweep_mode)
{
    std::vector<Series> series;
    std::size_t next_ckpt = 0;
    const bool several_neural = job.checkpoints.size() > 1;
    for (const std::string& name : job.policies) {
        Policy policy = Policy::bisection();
        std::string label = name;
        if (name == "hpm") {
            policy = Policy::hpm(job.hpm_depth);
        } else if (name == "neural") {
            const std::string& path = job.checkpoints[next_ckpt++];
            ScanPolicyNet net = [&] {
                try {
                    return ScanPolicyNet::load(path);
                } catch (const std::exception& e) {
                    throw ConfigError("checkpoint", e.what());
                }
            }();
            if (net.n_bins() != job.eval.n_bins) {
                throw ConfigError("checkpoint", "checkpoint has N=" + std::to_string(net.n_bins()) +
                                                    " but n_bins is " + std::to_string(job.eval.n_bins));
            }
            policy = Policy::neural(std::make_shared<const ScanPolicyNet>(std::move(net)));
            if (several_neural) {
                label = "neural:" + fs::path(path).stem().string();
            }
        }
        std::vector<MetricsRecord> records =
            sweep_mode || job.eval.slots.size() > 1 ? sweep(policy, job.eval, job.eval.raw_snr_db, job.eval.slots)
                                                     : evaluate(policy, job.eval);
        for (MetricsRecord& r : records) {
            r.policy = label;
        }
        series.push_back(Series{label, std::move(records)});
    }
    return series;
}

int cmd_eval(const ordered_json& raw, const fs::path& dir, std::ostream& out, bool sweep_mode)
{
    const EvalJob job = eval_job_from_json(raw, sweep_mode);
    const ordered_json resolved = to_json(job, sweep_mode);
    write_manifest(dir, sweep_mode ? "sweep" : "eval", resolved);
    const std::vector<Series> series = run_eval_job(job, sweep_mode);
    std::vector<MetricsRecord> all;
    for (const Series& s : series) {
        all.insert(all.end(), s.records.begin(), s.records.end());
    }
    std::ostringstream csv;
    write_metrics_csv(csv, all);
    write_text(dir / "metrics.csv", csv.str());
    write_text(dir / "metrics.json", metrics_json(all) + "\n");
    if (sweep_mode) {
        std::ostringstream fig;
        write_figure_csv(fig, job.figure, series);
        write_text(dir / (job.figure + ".csv"), fig.str());
        if (job.figure == "fig4b") {
            std::ostringstream shape;
            write_cam_shape_csv(shape);
            write_text(dir / "fig4b_loss_shape.csv", shape.str());
        }
    }
    out << csv.str();
    std::size_t failed = 0;
    for (const MetricsRecord& r : all) {
        failed += r.failed_trials;
    }
    if (failed > 0) {
        out << "note: " << failed << " trial(s) failed and were excluded\n";
    }
    return kOk;
}

int cmd_dump(const ordered_json& raw, const fs::path& dir, std::ostream& out)
{
    const DumpJob job = dump_job_from_json(raw);
    write_manifest(dir, "dump-posterior", to_json(job));
    const Posterior prior = make_prior(job.prior, AngularGrid(job.n_bins));
    Policy policy = Policy::bisection();
    if (job.policy == "hpm") {
        policy = Policy::hpm(job.hpm_depth);
    } else if (job.policy == "neural") {
        ScanPolicyNet net = ScanPolicyNet::load(job.checkpoint);
        if (net.n_bins() != job.n_bins) {
            throw ConfigError("checkpoint", "checkpoint grid does not match n_bins");
        }
        policy = Policy::neural(std::make_shared<const ScanPolicyNet>(std::move(net)));
    }
    Rng rng = Rng::stream(job.seed, 0xd0d0);
    const double psi = job.psi < 0.0 ? sample_angle(prior, rng) : wrap(job.psi);
    const EpisodeTrace trace =
        run_episode_eval(policy, prior, psi, ChannelParams::from_raw_snr_db(job.raw_snr_db), job.slots, rng);
    for (std::size_t i = 0; i < trace.posteriors.size(); ++i) {
        std::ostringstream os;
        write_posterior(os, trace.posteriors[i]);
        write_text(dir / ("posterior_" + std::to_string(i) + ".txt"), os.str());
    }
    write_text(dir / "trace.txt", trace.dump());
    out << trace.dump();
    return kOk;
}

struct GradcheckArgs {
    std::uint64_t seed = 1;
    std::size_t n_bins = 8;
    int slots = 2;
    std::string loss = "cam";
    int cam_order = 1;
    std::size_t coords = 64;
    double raw_snr_db = 0.0;
    bool corrupt = false;
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out)
{
    if (a.n_bins < 2 || a.n_bins > 16) {
        throw ConfigError("n_bins", "gradcheck runs on 2..16 bins");
    }
    GradcheckOptions opt;
    opt.coords = a.coords;
    opt.raw_snr_db = a.raw_snr_db;
    opt.tape.corrupt_logistic_derivative = a.corrupt;
    if (a.loss == "mmse") {
        opt.loss = LossSpec::mmse();
    } else if (a.loss == "cam") {
        if (a.cam_order < 1) {
            throw ConfigError("cam_order", "must be >= 1");
        }
        opt.loss = LossSpec::cam(a.cam_order);
    } else {
        throw ConfigError("loss", "unknown loss '" + a.loss + "' (cam, mmse)");
    }
    const GradcheckReport r = gradcheck(a.seed, a.n_bins, a.slots, opt);
    out << std::setprecision(6) << "gradcheck seed=" << a.seed << " N=" << a.n_bins << " b=" << a.slots
        << " loss=" << opt.loss.name() << " coords=" << r.coords << " max_rel_err=" << r.max_rel_err
        << " tolerance=" << opt.tolerance << (r.passed ? " PASS" : " FAIL") << "\n";
    if (!r.passed) {
        out << "worst coordinate " << r.worst_coord << ": analytic " << std::setprecision(17) << r.worst_analytic
            << " numeric " << r.worst_numeric << "\n";
        return kCheckFailed;
    }
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Bayesian beam-alignment simulator and trainer", "beamalign"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    std::string config_path;
    std::string out_dir;
    Overrides ov;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Flat JSON config or a run manifest");
        sub->add_option("--out", out_dir, "Output directory (default ./out)");
        sub->add_option("--seed", ov.seed, "Master seed");
        sub->add_option("--threads", ov.threads, "Worker threads (0: all cores)");
        sub->add_option("--raw-snr-db", ov.raw_snr_db, "Raw SNR in dB, comma-separated for a set");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "Train the scan network");
    add_common(train_cmd);
    train_cmd->add_option("--slots", ov.slots, "Probing slots b");
    train_cmd->add_option("--loss", ov.loss, "cam or mmse");
    train_cmd->add_option("--cam-order", ov.cam_order, "CAM order n");
    train_cmd->add_option("--prior", ov.prior, "uniform, mixture or custom");

    CLI::App* eval_cmd = app.add_subcommand("eval", "Monte Carlo evaluation of policies");
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "Evaluation grid with figure data");
    for (CLI::App* sub : {eval_cmd, sweep_cmd}) {
        add_common(sub);
        sub->add_option("--slots", ov.slots, "Probing slots, comma-separated");
        sub->add_option("--trials", ov.trials, "Trials per cell");
        sub->add_option("--policy", ov.policy, "bisection, hpm, neural (comma-separated)");
        sub->add_option("--prior", ov.prior, "uniform, mixture or custom");
    }

    CLI::App* dump_cmd = app.add_subcommand("dump-posterior", "Run one episode and write every posterior");
    add_common(dump_cmd);
    dump_cmd->add_option("--slots", ov.slots, "Probing slots b");
    dump_cmd->add_option("--policy", ov.policy, "bisection, hpm or neural");
    dump_cmd->add_option("--prior", ov.prior, "uniform, mixture or custom");

    GradcheckArgs gc;
    CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of episode gradients");
    grad_cmd->add_option("--seed", gc.seed, "Seed");
    grad_cmd->add_option("--n-bins", gc.n_bins, "Grid size (<= 16)");
    grad_cmd->add_option("--slots", gc.slots, "Probing slots b")->check(CLI::NonNegativeNumber);
    grad_cmd->add_option("--loss", gc.loss, "cam or mmse");
    grad_cmd->add_option("--cam-order", gc.cam_order, "CAM order n");
    grad_cmd->add_option("--coords", gc.coords, "Sampled parameter coordinates");
    grad_cmd->add_option("--raw-snr-db", gc.raw_snr_db, "Raw SNR in dB");
    grad_cmd->add_flag("--corrupt-derivative", gc.corrupt, "Fault injection for negative controls")
        ->group("");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << "\n";
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kConfigInvalid;
    }

    try {
        if (grad_cmd->parsed()) {
            return cmd_gradcheck(gc, out);
        }
        std::string command;
        for (CLI::App* sub : {train_cmd, eval_cmd, sweep_cmd, dump_cmd}) {
            if (sub->parsed()) {
                command = sub->get_name();
            }
        }
        ordered_json raw = load_config(config_path, command);
        apply_overrides(raw, ov);
        if (command == "train") {
            // Validate before touching the file system.
            (void)train_config_from_json(raw);
            return cmd_train(raw, prepare_out(out_dir), out);
        }
        if (command == "eval" || command == "sweep") {
            (void)eval_job_from_json(raw, command == "sweep");
            return cmd_eval(raw, prepare_out(out_dir), out, command == "sweep");
        }
        (void)dump_job_from_json(raw);
        return cmd_dump(raw, prepare_out(out_dir), out);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kConfigInvalid;
    } catch (const NumericError& e) {
        err << "numeric error: " << e.what() << "\n" << e.trace();
        if (!out_dir.empty()) {
            std::ofstream dump(fs::path(out_dir) / "numeric_failure.txt");
            dump << e.what() << "\n" << e.trace();
        }
        return kNumericFailure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kRuntimeFailure;
    }
}

}  // namespace beamalign::cli

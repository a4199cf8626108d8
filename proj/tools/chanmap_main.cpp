#include <cstdio>
#include <ctime>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "chanmap/data.hpp"
#include "chanmap/export.hpp"
#include "chanmap/search.hpp"

using nlohmann::json;

namespace chanmap {
namespace {

const char* kSummaryHeader = "lambda,val_accuracy,test_accuracy,cycles,energy_uj,artifact";
const char* kBaselineHeader = "kind,val_accuracy,test_accuracy,cycles,energy_uj,artifact";

struct CommonArgs {
    std::string net;
    std::string platform;
    std::string data;
    std::string out;
    unsigned long long seed = 0;
    int train_samples = 1024;
    int test_samples = 512;
};

struct TrainArgs {
    int warmup_epochs = 30;
    int search_epochs = 25;
    int finetune_epochs = 20;
    int patience = 8;
    int batch_size = 32;
    double lr = 1e-3;
    double theta_lr = 5e-2;
    std::string optimizer = "adam";
    double weight_decay = 0.0;
    bool anneal = false;
    std::string target = "latency";
    double lambda = 0.0;
    bool raw_lambda = false;
};

std::string g_command_line;

void add_common(CLI::App* s, CommonArgs& c, bool need_data) {
    s->add_option("--net", c.net, "network spec: builtin name or file")->required();
    s->add_option("--platform", c.platform, "platform profile: builtin name or file")->required();
    if (need_data) {
        auto* d = s->add_option("--data", c.data, "dataset directory or 'synthetic'");
        const std::string env = default_data_dir();
        if (env.empty())
            d->required();
        else
            d->default_val(env);
        s->add_option("--train-samples", c.train_samples,
                      "training rows to keep (<=0 keeps everything)");
        s->add_option("--test-samples", c.test_samples, "test rows to keep (<=0 keeps everything)");
    }
    s->add_option("--out", c.out, "output directory")->required();
    s->add_option("--seed", c.seed, "run seed")->required();
}

void add_train(CLI::App* s, TrainArgs& t) {
    s->add_option("--warmup-epochs", t.warmup_epochs, "warmup epoch budget");
    s->add_option("--search-epochs", t.search_epochs, "search epoch budget");
    s->add_option("--finetune-epochs", t.finetune_epochs, "finetune epoch budget");
    s->add_option("--patience", t.patience, "early-stop patience, all phases");
    s->add_option("--batch-size", t.batch_size, "minibatch size");
    s->add_option("--lr", t.lr, "weight learning rate");
    s->add_option("--theta-lr", t.theta_lr, "assignment learning rate");
    s->add_option("--optimizer", t.optimizer, "weight optimizer: adam | sgd");
    s->add_option("--weight-decay", t.weight_decay, "weight decay");
    s->add_flag("--anneal", t.anneal, "anneal assignment temperature during search");
    s->add_option("--target", t.target, "cost target: latency | energy");
}

TrainConfig make_cfg(const CommonArgs& c, const TrainArgs& t) {
    TrainConfig cfg;
    cfg.warmup = {t.warmup_epochs, t.patience};
    cfg.search = {t.search_epochs, t.patience};
    cfg.finetune = {t.finetune_epochs, t.patience};
    cfg.batch_size = t.batch_size;
    cfg.weight_opt = {t.optimizer, t.lr, 0.9, t.weight_decay};
    cfg.theta_opt = {"adam", t.theta_lr, 0.9, 0.0};
    cfg.target = parse_cost_target(t.target);
    cfg.seed = c.seed;
    cfg.anneal_temperature = t.anneal;
    return cfg;
}

Dataset load_data(const CommonArgs& c, const NetworkSpec& spec) {
    if (c.data == "synthetic")
        return gen_synthetic(spec.classes, c.train_samples > 0 ? c.train_samples : 1024,
                             c.test_samples > 0 ? c.test_samples : 512, c.seed, spec.in_channels,
                             spec.in_h, spec.in_w);
    return load_cifar10_binary(c.data, c.train_samples, c.test_samples, c.seed);
}

double effective_lambda(double lam, bool raw, const NetworkSpec& spec,
                        const PlatformProfile& pf, CostTarget target) {
    if (raw || lam == 0.0) return lam;
    const double c0 = initial_relaxed_cost(spec, pf, target);
    return c0 > 0.0 ? lam / c0 : lam;
}

std::string utc_now() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_manifest(const CommonArgs& c, const NetworkSpec& spec, const PlatformProfile& pf,
                    const Dataset* data, const json& flags) {
    json m;
    m["command"] = g_command_line;
    m["net"] = c.net;
    m["platform"] = c.platform;
    m["data"] = c.data;
    m["seed"] = c.seed;
    m["output_dir"] = c.out;
    const std::string cfg_text = serialize_network_spec(spec) + serialize_platform(pf);
    m["config_hash"] = hex64(fnv1a64(cfg_text.data(), cfg_text.size()));
    m["created_utc"] = utc_now();
    if (data) {
        m["normalization"] = {{"mean", data->channel_mean}, {"std", data->channel_std}};
        m["samples"] = {{"train", data->train.size()},
                        {"val", data->val.size()},
                        {"test", data->test.size()}};
    }
    m["flags"] = flags;
    write_text_file(c.out + "/run_manifest.json", m.dump(2) + "\n");
}

void save_ckpt(const Network& net, const std::string& path) {
    TensorStore s;
    net.save_state(s);
    s.save(path);
}

void load_ckpt(Network& net, const std::string& path) {
    check(file_exists(path), "E_CONFIG", "checkpoint '" + path + "' does not exist");
    const TensorStore s = TensorStore::load(path);
    net.load_state(s);
}

std::string summary_row(const ParetoPoint& p) {
    std::ostringstream os;
    os << format_double(p.lambda) << ',' << format_double(p.val_accuracy) << ','
       << format_double(p.test_accuracy) << ',' << format_double(p.cycles) << ','
       << format_double(p.energy_uj) << ',' << p.artifact;
    return os.str();
}

ParetoPoint evaluate_point(Network& net, const Dataset& data, const CostReport& cost,
                           int batch_size) {
    PassConfig pc;
    pc.mode = PassConfig::Mode::Discrete;
    ParetoPoint p;
    p.val_accuracy = evaluate_split(net, data.val, pc, batch_size);
    p.test_accuracy = evaluate_split(net, data.test, pc, batch_size);
    p.cycles = cost.total_cycles;
    p.energy_uj = cost.energy_uj;
    return p;
}

void print_phase(const char* name, const PhaseResult& r) {
    std::cout << "phase " << name << ": best val " << format_double(r.best_val_accuracy)
              << " at epoch " << r.best_epoch << " (" << r.history.size() << " epochs)\n";
}

void cmd_warmup(const CommonArgs& c, const TrainArgs& t) {
    const NetworkSpec spec = resolve_network_spec(c.net);
    const PlatformProfile pf = resolve_platform(c.platform);
    ensure_dir(c.out);
    const Dataset data = load_data(c, spec);
    const TrainConfig cfg = make_cfg(c, t);
    auto net = build_supernet(spec, pf, c.seed);
    const PhaseResult res = run_phase(Phase::Warmup, *net, cfg, data);
    save_ckpt(*net, c.out + "/warmup.ckpt");
    write_text_file(c.out + "/history.csv", history_csv(res.history));
    write_manifest(c, spec, pf, &data, {{"phase", "warmup"}, {"target", t.target}});
    print_phase("warmup", res);
}

void cmd_phase(Phase phase, const CommonArgs& c, const TrainArgs& t, const std::string& ckpt) {
    const NetworkSpec spec = resolve_network_spec(c.net);
    const PlatformProfile pf = resolve_platform(c.platform);
    ensure_dir(c.out);
    const Dataset data = load_data(c, spec);
    TrainConfig cfg = make_cfg(c, t);
    cfg.lambda = effective_lambda(t.lambda, t.raw_lambda, spec, pf, cfg.target);
    auto net = build_supernet(spec, pf, c.seed);
    load_ckpt(*net, ckpt);
    const PhaseResult res = run_phase(phase, *net, cfg, data);
    const bool is_search = phase == Phase::Search;
    save_ckpt(*net, c.out + (is_search ? "/search.ckpt" : "/final.ckpt"));
    write_text_file(c.out + "/history.csv", history_csv(res.history));
    write_manifest(c, spec, pf, &data,
                   {{"phase", phase_name(phase)},
                    {"checkpoint", ckpt},
                    {"lambda", t.lambda},
                    {"lambda_effective", cfg.lambda},
                    {"target", t.target}});
    print_phase(phase_name(phase).c_str(), res);
}

void cmd_run(const CommonArgs& c, const TrainArgs& t) {
    const NetworkSpec spec = resolve_network_spec(c.net);
    const PlatformProfile pf = resolve_platform(c.platform);
    ensure_dir(c.out);
    const Dataset data = load_data(c, spec);
    TrainConfig cfg = make_cfg(c, t);
    cfg.lambda = effective_lambda(t.lambda, t.raw_lambda, spec, pf, cfg.target);

    auto net = build_supernet(spec, pf, c.seed);
    const PhaseResult w = run_phase(Phase::Warmup, *net, cfg, data);
    save_ckpt(*net, c.out + "/warmup.ckpt");
    print_phase("warmup", w);
    const PhaseResult s = run_phase(Phase::Search, *net, cfg, data);
    save_ckpt(*net, c.out + "/search.ckpt");
    print_phase("search", s);
    const PhaseResult f = run_phase(Phase::Final, *net, cfg, data);
    save_ckpt(*net, c.out + "/final.ckpt");
    print_phase("finetune", f);

    std::vector<EpochRow> rows = w.history;
    rows.insert(rows.end(), s.history.begin(), s.history.end());
    rows.insert(rows.end(), f.history.begin(), f.history.end());
    write_text_file(c.out + "/history.csv", history_csv(rows));

    MappingArtifact art = export_mapping(*net, cfg.target);
    save_artifact(art, c.out + "/mapping.txt", c.out + "/mapping.blob");

    ParetoPoint p = evaluate_point(*net, data, art.cost, cfg.batch_size);
    p.lambda = t.lambda;
    p.artifact = "mapping.txt";
    write_text_file(c.out + "/summary.csv",
                    std::string(kSummaryHeader) + "\n" + summary_row(p) + "\n");
    write_manifest(c, spec, pf, &data,
                   {{"phase", "run"},
                    {"lambda", t.lambda},
                    {"lambda_effective", cfg.lambda},
                    {"target", t.target}});
    std::cout << kSummaryHeader << "\n" << summary_row(p) << "\n";
}

void cmd_sweep(const CommonArgs& c, const TrainArgs& t, const std::string& lambdas_text,
               int jobs) {
    const NetworkSpec spec = resolve_network_spec(c.net);
    const PlatformProfile pf = resolve_platform(c.platform);
    ensure_dir(c.out);
    const Dataset data = load_data(c, spec);
    TrainConfig cfg = make_cfg(c, t);

    SweepOptions opt;
    opt.normalized = !t.raw_lambda;
    {
        std::istringstream is(lambdas_text);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            if (tok.empty()) continue;
            try {
                opt.lambdas.push_back(std::stod(tok));
            } catch (const std::exception&) {
                fail("E_FLAGS", "malformed penalty value '" + tok + "' in --lambdas");
            }
        }
    }
    check(!opt.lambdas.empty(), "E_FLAGS", "--lambdas needs at least one value");
    check(jobs >= 1, "E_FLAGS", "--jobs must be >= 1");
    if (jobs > 1) std::cout << "note: sweep points run sequentially in this build\n";

    auto point_dir = [&](int i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "point_%02d", i);
        return std::string(buf);
    };
    opt.on_point = [&](int i, double, Network& net) {
        const std::string dir = c.out + "/" + point_dir(i);
        ensure_dir(dir);
        const MappingArtifact art = export_mapping(net, cfg.target);
        save_artifact(art, dir + "/mapping.txt", dir + "/mapping.blob");
        save_ckpt(net, dir + "/final.ckpt");
        return point_dir(i) + "/mapping.txt";
    };
    opt.on_history = [&](int i, double, const std::vector<EpochRow>& rows) {
        const std::string dir = c.out + "/" + point_dir(i);
        ensure_dir(dir);
        write_text_file(dir + "/history.csv", history_csv(rows));
    };

    const SweepResult res = run_sweep(spec, pf, cfg, opt, data);

    std::ostringstream sum;
    sum << kSummaryHeader << "\n";
    for (const auto& p : res.points) sum << summary_row(p) << "\n";
    write_text_file(c.out + "/summary.csv", sum.str());

    std::ostringstream front;
    front << kSummaryHeader << "\n";
    for (int idx : res.front) front << summary_row(res.points[static_cast<size_t>(idx)]) << "\n";
    write_text_file(c.out + "/front.csv", front.str());

    json j;
    j["target"] = t.target;
    j["normalized_lambdas"] = opt.normalized;
    j["points"] = json::array();
    for (const auto& p : res.points)
        j["points"].push_back({{"lambda", p.lambda},
                               {"val_accuracy", p.val_accuracy},
                               {"test_accuracy", p.test_accuracy},
                               {"cycles", p.cycles},
                               {"energy_uj", p.energy_uj},
                               {"artifact", p.artifact}});
    j["front"] = res.front;
    j["failures"] = json::array();
    for (const auto& fpt : res.failures)
        j["failures"].push_back({{"lambda", fpt.lambda}, {"error", fpt.error}});
    write_text_file(c.out + "/summary.json", j.dump(2) + "\n");
    write_manifest(c, spec, pf, &data,
                   {{"phase", "sweep"},
                    {"lambdas", lambdas_text},
                    {"normalized", opt.normalized},
                    {"jobs", jobs},
                    {"target", t.target}});

    std::cout << kSummaryHeader << "\n";
    for (const auto& p : res.points) std::cout << summary_row(p) << "\n";
    for (const auto& fpt : res.failures)
        std::cerr << "sweep point lambda=" << format_double(fpt.lambda) << " failed: " << fpt.error
                  << "\n";
    check(!res.points.empty(), "E_CONFIG", "every sweep point failed");
}

void cmd_baseline(const CommonArgs& c, const TrainArgs& t, const std::string& kind,
                  const std::string& ckpt) {
    const NetworkSpec spec = resolve_network_spec(c.net);
    const PlatformProfile pf = resolve_platform(c.platform);
    ensure_dir(c.out);
    const Dataset data = load_data(c, spec);
    const TrainConfig cfg = make_cfg(c, t);
    const BaselineSpec bspec = parse_baseline(kind);

    auto net = build_supernet(spec, pf, c.seed);
    std::vector<EpochRow> rows;
    if (!ckpt.empty()) {
        load_ckpt(*net, ckpt);
    } else {
        const PhaseResult w = run_phase(Phase::Warmup, *net, cfg, data);
        rows = w.history;
        print_phase("warmup", w);
    }
    const Assignment a = build_baseline(bspec, *net, cfg.target);
    net->apply_assignment(a);
    const PhaseResult f = run_phase(Phase::Final, *net, cfg, data);
    rows.insert(rows.end(), f.history.begin(), f.history.end());
    print_phase("finetune", f);

    MappingArtifact art = export_mapping(*net, cfg.target);
    save_artifact(art, c.out + "/mapping.txt", c.out + "/mapping.blob");
    save_ckpt(*net, c.out + "/final.ckpt");
    write_text_file(c.out + "/history.csv", history_csv(rows));

    const ParetoPoint p = evaluate_point(*net, data, art.cost, cfg.batch_size);
    std::ostringstream row;
    row << kind << ',' << format_double(p.val_accuracy) << ',' << format_double(p.test_accuracy)
        << ',' << format_double(p.cycles) << ',' << format_double(p.energy_uj) << ",mapping.txt";
    write_text_file(c.out + "/summary.csv",
                    std::string(kBaselineHeader) + "\n" + row.str() + "\n");
    write_manifest(c, spec, pf, &data,
                   {{"phase", "baseline"},
                    {"kind", kind},
                    {"checkpoint", ckpt},
                    {"target", t.target}});
    std::cout << kBaselineHeader << "\n" << row.str() << "\n";
}

void cmd_export(const CommonArgs& c, const TrainArgs& t, const std::string& ckpt) {
    const NetworkSpec spec = resolve_network_spec(c.net);
    const PlatformProfile pf = resolve_platform(c.platform);
    ensure_dir(c.out);
    auto net = build_supernet(spec, pf, c.seed);
    load_ckpt(*net, ckpt);
    MappingArtifact art = export_mapping(*net, parse_cost_target(t.target));
    save_artifact(art, c.out + "/mapping.txt", c.out + "/mapping.blob");
    write_manifest(c, spec, pf, nullptr,
                   {{"phase", "export"}, {"checkpoint", ckpt}, {"target", t.target}});
    std::cout << "exported mapping.txt (cycles " << format_double(art.cost.total_cycles)
              << ", energy_uj " << format_double(art.cost.energy_uj) << ", checksum "
              << art.probe_checksum << ")\n";
}

void cmd_eval_cost(const std::string& artifact_path) {
    const MappingArtifact art = load_artifact(artifact_path);
    auto net = build_supernet(art.spec, art.platform, 0);
    Assignment a;
    for (const auto& al : art.layers)
        if (al.mapped) a.layers.push_back({al.name, al.assignment, al.split});
    net->apply_assignment(a);
    const CostReport rep = net->exact_cost();

    auto show = [](const char* k, double v) {
        std::cout << k << " " << format_double(v) << "\n";
    };
    show("total_cycles", rep.total_cycles);
    show("latency_seconds", rep.latency_seconds);
    show("active_mw_cycles", rep.active_mw_cycles);
    show("idle_mw_cycles", rep.idle_mw_cycles);
    show("energy_mw_cycles", rep.energy_mw_cycles);
    show("energy_uj", rep.energy_uj);
    for (const auto& row : rep.layers) {
        std::cout << "layer " << row.layer << " " << format_double(row.makespan);
        for (double cy : row.cu_cycles) std::cout << " " << format_double(cy);
        std::cout << "\n";
    }

    bool same = rep.total_cycles == art.cost.total_cycles &&
                rep.latency_seconds == art.cost.latency_seconds &&
                rep.active_mw_cycles == art.cost.active_mw_cycles &&
                rep.idle_mw_cycles == art.cost.idle_mw_cycles &&
                rep.energy_mw_cycles == art.cost.energy_mw_cycles &&
                rep.energy_uj == art.cost.energy_uj &&
                rep.layers.size() == art.cost.layers.size();
    if (same)
        for (size_t i = 0; i < rep.layers.size(); ++i)
            same = same && rep.layers[i].layer == art.cost.layers[i].layer &&
                   rep.layers[i].makespan == art.cost.layers[i].makespan &&
                   rep.layers[i].cu_cycles == art.cost.layers[i].cu_cycles;
    check(same, "E_VERIFY", "recomputed cost does not match the report embedded in the artifact");
    std::cout << "embedded_match 1\n";
}

void cmd_verify(const std::string& artifact_path, const std::string& ckpt,
                unsigned long long seed, int samples) {
    const MappingArtifact art = load_artifact(artifact_path);
    if (ckpt.empty()) {
        const VerifyReport rep = verify_artifact_self(art);
        std::cout << "checksum " << (rep.checksum_ok ? "ok" : "MISMATCH") << "\n";
        check(rep.pass, "E_VERIFY", "artifact probe checksum does not match its payloads");
        std::cout << "verify pass\n";
        return;
    }
    auto net = build_supernet(art.spec, art.platform, 0);
    load_ckpt(*net, ckpt);
    Rng rng(seed ^ 0xa5a5a5a5ull);
    const Tensor inputs = Tensor::rand_normal(
        {samples, art.spec.in_channels, art.spec.in_h, art.spec.in_w}, rng, 0.0f, 1.0f);
    const VerifyReport rep = verify_artifact(art, *net, inputs, 1e-4);
    std::cout << "max_abs_dev " << format_double(rep.max_abs_dev) << "\n";
    std::cout << "checksum " << (rep.checksum_ok ? "ok" : "MISMATCH") << "\n";
    if (!rep.first_bad_layer.empty())
        std::cout << "first_divergence " << rep.first_bad_layer << "\n";
    check(rep.pass, "E_VERIFY",
          rep.first_bad_layer.empty()
              ? std::string("artifact replay deviates from the reference network")
              : "artifact replay diverges at layer '" + rep.first_bad_layer + "'");
    std::cout << "verify pass\n";
}

int run_cli(int argc, char** argv) {
    {
        std::ostringstream cmd;
        for (int i = 0; i < argc; ++i) cmd << (i ? " " : "") << argv[i];
        g_command_line = cmd.str();
    }

    CLI::App app{"gradient-searched channel-to-CU mapping for small CNNs"};
    app.require_subcommand(1);

    CommonArgs c;
    TrainArgs t;
    std::string ckpt, kind, lambdas_text, artifact_path;
    int jobs = 1;
    int samples = 8;
    unsigned long long vseed = 0;

    auto* warmup = app.add_subcommand("warmup", "train the float supernet");
    add_common(warmup, c, true);
    add_train(warmup, t);

    auto* search = app.add_subcommand("search", "joint weight and assignment search");
    add_common(search, c, true);
    add_train(search, t);
    search->add_option("--lambda", t.lambda, "cost penalty weight")->required();
    search->add_flag("--raw-lambda", t.raw_lambda, "treat --lambda as a raw multiplier");
    search->add_option("--checkpoint", ckpt, "warmup checkpoint to start from")->required();

    auto* finetune = app.add_subcommand("finetune", "discretize and fine-tune");
    add_common(finetune, c, true);
    add_train(finetune, t);
    finetune->add_option("--checkpoint", ckpt, "search checkpoint to start from")->required();

    auto* run = app.add_subcommand("run", "warmup, search and finetune in one go");
    add_common(run, c, true);
    add_train(run, t);
    run->add_option("--lambda", t.lambda, "cost penalty weight")->required();
    run->add_flag("--raw-lambda", t.raw_lambda, "treat --lambda as a raw multiplier");

    auto* sweep = app.add_subcommand("sweep", "full pipeline across a penalty grid");
    add_common(sweep, c, true);
    add_train(sweep, t);
    sweep->add_option("--lambdas", lambdas_text, "comma-separated penalty weights")->required();
    sweep->add_flag("--raw-lambda", t.raw_lambda, "treat --lambdas as raw multipliers");
    sweep->add_option("--jobs", jobs, "sweep parallelism");

    auto* baseline = app.add_subcommand("baseline", "train a fixed reference assignment");
    add_common(baseline, c, true);
    add_train(baseline, t);
    baseline
        ->add_option("--kind", kind,
                     "baseline: all-on-cu:<name> | io-heuristic[:EDGE:BACKBONE] | min-cost")
        ->required();
    baseline->add_option("--checkpoint", ckpt, "reuse an existing warmup checkpoint");

    auto* exp = app.add_subcommand("export", "export a mapping artifact from a checkpoint");
    add_common(exp, c, false);
    exp->add_option("--checkpoint", ckpt, "finetuned checkpoint to export")->required();
    exp->add_option("--target", t.target, "cost target: latency | energy");

    auto* evalcost = app.add_subcommand("eval-cost", "recompute an artifact's cost report");
    evalcost->add_option("--artifact", artifact_path, "mapping artifact text file")->required();

    auto* verify = app.add_subcommand("verify", "replay an artifact and check equivalence");
    verify->add_option("--artifact", artifact_path, "mapping artifact text file")->required();
    verify->add_option("--checkpoint", ckpt, "reference checkpoint to compare against");
    verify->add_option("--seed", vseed, "probe input seed");
    verify->add_option("--samples", samples, "probe inputs for the comparison");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << "error[E_FLAGS] " << e.what() << "\n";
        return 1;
    }

    if (warmup->parsed()) cmd_warmup(c, t);
    else if (search->parsed()) cmd_phase(Phase::Search, c, t, ckpt);
    else if (finetune->parsed()) cmd_phase(Phase::Final, c, t, ckpt);
    else if (run->parsed()) cmd_run(c, t);
    else if (sweep->parsed()) cmd_sweep(c, t, lambdas_text, jobs);
    else if (baseline->parsed()) cmd_baseline(c, t, kind, ckpt);
    else if (exp->parsed()) cmd_export(c, t, ckpt);
    else if (evalcost->parsed()) cmd_eval_cost(artifact_path);
    else if (verify->parsed()) cmd_verify(artifact_path, ckpt, vseed, samples);
    return 0;
}

} // namespace
} // namespace chanmap

int main(int argc, char** argv) {
    try {
        return chanmap::run_cli(argc, argv);
    } catch (const chanmap::Error& e) {
        std::cerr << "error[" << e.tag() << "] " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error[E_INTERNAL] " << e.what() << "\n";
        return 1;
    }
}

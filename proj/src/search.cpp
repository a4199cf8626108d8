#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "chanmap/io.hpp"
#include "chanmap/search.hpp"

namespace chanmap {

std::unique_ptr<Optimizer> OptimSettings::build(std::vector<Tensor> params) const {
    check(lr > 0.0, "E_CONFIG", "learning rate must be positive");
    if (kind == "adam")
        return std::make_unique<Adam>(std::move(params), static_cast<float>(lr), 0.9f, 0.999f,
                                      1e-8f, static_cast<float>(weight_decay));
    if (kind == "sgd")
        return std::make_unique<Sgd>(std::move(params), static_cast<float>(lr),
                                     static_cast<float>(momentum),
                                     static_cast<float>(weight_decay));
    fail("E_CONFIG", "unknown optimizer '" + kind + "'");
}

const char* kHistoryHeader = "epoch,phase,task_loss,cost_relaxed,cost_exact,total_loss,val_accuracy";

std::string history_csv(const std::vector<EpochRow>& rows) {
    std::ostringstream os;
    os << kHistoryHeader << "\n";
    for (const auto& r : rows) {
        os << r.epoch << ',' << phase_name(r.phase) << ',' << format_double(r.task_loss) << ','
           << format_double(r.cost_relaxed) << ',' << format_double(r.cost_exact) << ','
           << format_double(r.total_loss) << ',' << format_double(r.val_accuracy) << "\n";
    }
    return os.str();
}

double initial_relaxed_cost(const NetworkSpec& spec, const PlatformProfile& platform,
                            CostTarget target) {
    auto net = build_supernet(spec, platform, 0);
    NoGradGuard ng;
    return static_cast<double>(net->relaxed_cost(target).item());
}

namespace {

int phase_ordinal(Phase p) { return p == Phase::Warmup ? 0 : p == Phase::Search ? 1 : 2; }

PassConfig phase_pass(Phase p, bool training) {
    PassConfig pc;
    pc.mode = p == Phase::Warmup    ? PassConfig::Mode::Float
              : p == Phase::Search ? PassConfig::Mode::Blend
                                   : PassConfig::Mode::Discrete;
    pc.training = training;
    return pc;
}

double exact_cost_metric(const Network& net, CostTarget t) {
    const CostReport r = net.exact_cost();
    return t == CostTarget::Latency ? r.total_cycles : r.energy_mw_cycles;
}

// Cost of the argmax assignment at the current bank state. Phases before the
// hard one take a transient snapshot; the hard phase reads its fixed one.
double snapshot_exact_cost(Network& net, Phase phase, CostTarget t) {
    if (phase == Phase::Final) return exact_cost_metric(net, t);
    net.discretize();
    const double c = exact_cost_metric(net, t);
    net.clear_discrete();
    return c;
}

std::vector<int> iota_vec(int n) {
    std::vector<int> v(static_cast<size_t>(n));
    std::iota(v.begin(), v.end(), 0);
    return v;
}

} // namespace

double evaluate_split(Network& net, const DataSplit& split, const PassConfig& pass,
                      int batch_size) {
    NoGradGuard ng;
    PassConfig pc = pass;
    pc.training = false;
    double hits = 0.0;
    long long seen = 0;
    const int n = split.size();
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(start + batch_size, n);
        std::vector<int> idx(static_cast<size_t>(end - start));
        std::iota(idx.begin(), idx.end(), start);
        Tensor logits = net.forward(gather_rows(split.images, idx), pc);
        hits += accuracy(logits, gather_labels(split.labels, idx)) * (end - start);
        seen += end - start;
    }
    return seen > 0 ? hits / static_cast<double>(seen) : 0.0;
}

PhaseResult run_phase(Phase phase, Network& net, const TrainConfig& cfg, const Dataset& data) {
    check(cfg.lambda >= 0.0, "E_CONFIG", "penalty weight must be >= 0");
    check(cfg.batch_size >= 2, "E_CONFIG", "batch size must be at least 2");
    check(data.train.size() >= 2, "E_DATA", "training split is empty");
    check(data.val.size() >= 1, "E_DATA", "validation split is empty");

    const int level = net.phase_level();
    switch (phase) {
    case Phase::Warmup:
        check(level == 0, "E_PHASE_ORDER", "warmup must run on a freshly built network");
        break;
    case Phase::Search:
        check(level >= 1, "E_PHASE_ORDER", "search requires a completed warmup");
        check(level < 3, "E_PHASE_ORDER", "network is already finalized");
        break;
    case Phase::Final:
        check(level >= 1, "E_PHASE_ORDER", "finetune requires a completed warmup");
        check(level < 3, "E_PHASE_ORDER", "network is already finalized");
        break;
    }

    const PhaseSchedule sched =
        phase == Phase::Warmup ? cfg.warmup : phase == Phase::Search ? cfg.search : cfg.finetune;
    check(sched.epochs >= 1 && sched.patience >= 1, "E_CONFIG",
          "phase schedule needs epochs and patience >= 1");

    net.set_banks_trainable(phase == Phase::Search);
    if (phase == Phase::Search) {
        net.unfreeze_quantizers();
    } else if (phase == Phase::Final) {
        bool all_discrete = true;
        for (const auto& L : net.layers())
            if (L.is_mapped() && !L.mapped->discrete) all_discrete = false;
        if (!all_discrete) net.discretize();
        {
            // calibration pass to give the activation quantizers statistics
            NoGradGuard ng;
            const int n = std::min(cfg.batch_size * 4, data.train.size());
            net.forward(gather_rows(data.train.images, iota_vec(n)), phase_pass(phase, false));
        }
        net.freeze_quantizers();
    }

    auto wopt = cfg.weight_opt.build(net.weight_params());
    std::unique_ptr<Optimizer> topt;
    if (phase == Phase::Search) {
        auto tp = net.theta_params();
        if (!tp.empty()) topt = cfg.theta_opt.build(std::move(tp));
    }

    Rng rng(cfg.seed ^ (0x51ed2700ull + 0x9e3779b97f4a7c15ull *
                                            static_cast<unsigned long long>(phase_ordinal(phase))));
    PhaseResult res;
    TensorStore best_state;
    double best = -1.0;
    int bad = 0;
    const int n_train = data.train.size();
    std::vector<int> order = iota_vec(n_train);

    for (int epoch = 1; epoch <= sched.epochs; ++epoch) {
        if (phase == Phase::Search && cfg.anneal_temperature) {
            const float frac = sched.epochs > 1
                                   ? static_cast<float>(epoch - 1) / static_cast<float>(sched.epochs - 1)
                                   : 1.0f;
            net.set_bank_temperature(1.0f + (cfg.temperature_end - 1.0f) * frac);
        }
        rng.shuffle(order.begin(), order.end());
        const PassConfig train_pc = phase_pass(phase, true);
        double loss_sum = 0.0;
        long long seen = 0;
        for (int start = 0; start < n_train; start += cfg.batch_size) {
            const int end = std::min(start + cfg.batch_size, n_train);
            if (end - start < 2) continue; // batch norm needs two rows
            std::vector<int> bidx(order.begin() + start, order.begin() + end);
            Tensor bx = gather_rows(data.train.images, bidx);
            std::vector<int> by = gather_labels(data.train.labels, bidx);
            wopt->zero_grad();
            if (topt) topt->zero_grad();
            Tensor logits = net.forward(bx, train_pc);
            Tensor task = cross_entropy(logits, by);
            Tensor total = task;
            if (phase == Phase::Search && cfg.lambda > 0.0)
                total = add(task, affine(net.relaxed_cost(cfg.target),
                                         static_cast<float>(cfg.lambda), 0.0f));
            backward(total);
            wopt->step();
            if (topt) topt->step();
            loss_sum += static_cast<double>(task.item()) * (end - start);
            seen += end - start;
        }

        EpochRow row;
        row.epoch = epoch;
        row.phase = phase;
        row.task_loss = seen > 0 ? loss_sum / static_cast<double>(seen) : 0.0;
        {
            NoGradGuard ng;
            row.cost_relaxed = static_cast<double>(net.relaxed_cost(cfg.target).item());
        }
        row.cost_exact = snapshot_exact_cost(net, phase, cfg.target);
        row.total_loss = row.task_loss + cfg.lambda * row.cost_relaxed;
        row.val_accuracy = evaluate_split(net, data.val, phase_pass(phase, false), cfg.batch_size);
        res.history.push_back(row);

        if (row.val_accuracy > best) {
            best = row.val_accuracy;
            res.best_epoch = epoch;
            bad = 0;
            best_state = TensorStore();
            net.save_state(best_state);
        } else if (row.val_accuracy == best) {
            // keep the most recent of equally good checkpoints
            res.best_epoch = epoch;
            best_state = TensorStore();
            net.save_state(best_state);
            ++bad;
        } else {
            ++bad;
        }
        if (bad >= sched.patience) break;
    }

    net.load_state(best_state);
    net.set_phase_level(phase_ordinal(phase) + 1);
    res.best_val_accuracy = best;
    return res;
}

std::vector<int> pareto_front(const std::vector<ParetoPoint>& points, CostTarget target) {
    auto cost = [&](const ParetoPoint& p) {
        return target == CostTarget::Latency ? p.cycles : p.energy_uj;
    };
    std::vector<int> front;
    for (size_t i = 0; i < points.size(); ++i) {
        bool dominated = false;
        for (size_t j = 0; j < points.size() && !dominated; ++j) {
            if (j == i) continue;
            const bool no_worse = points[j].val_accuracy >= points[i].val_accuracy &&
                                  cost(points[j]) <= cost(points[i]);
            const bool better = points[j].val_accuracy > points[i].val_accuracy ||
                                cost(points[j]) < cost(points[i]);
            if (no_worse && better) dominated = true;
        }
        if (!dominated) front.push_back(static_cast<int>(i));
    }
    std::sort(front.begin(), front.end(), [&](int a, int b) {
        return cost(points[static_cast<size_t>(a)]) < cost(points[static_cast<size_t>(b)]);
    });
    return front;
}

SweepResult run_sweep(const NetworkSpec& spec, const PlatformProfile& platform,
                      const TrainConfig& base, const SweepOptions& opt, const Dataset& data) {
    check(!opt.lambdas.empty(), "E_CONFIG", "sweep needs at least one penalty value");
    const double c0 = initial_relaxed_cost(spec, platform, base.target);

    auto warm = build_supernet(spec, platform, base.seed);
    TrainConfig wcfg = base;
    wcfg.lambda = 0.0;
    const PhaseResult wres = run_phase(Phase::Warmup, *warm, wcfg, data);
    TensorStore warm_state;
    warm->save_state(warm_state);
    warm.reset();

    SweepResult res;
    for (size_t i = 0; i < opt.lambdas.size(); ++i) {
        const double lam = opt.lambdas[i];
        try {
            check(lam >= 0.0, "E_CONFIG", "penalty values must be >= 0");
            auto net = build_supernet(spec, platform, base.seed);
            net->load_state(warm_state);
            TrainConfig cfg = base;
            cfg.lambda = opt.normalized && c0 > 0.0 ? lam / c0 : lam;
            const PhaseResult sres = run_phase(Phase::Search, *net, cfg, data);
            const PhaseResult fres = run_phase(Phase::Final, *net, cfg, data);

            ParetoPoint p;
            p.lambda = lam;
            const PassConfig eval_pc = phase_pass(Phase::Final, false);
            p.val_accuracy = evaluate_split(*net, data.val, eval_pc, cfg.batch_size);
            p.test_accuracy = evaluate_split(*net, data.test, eval_pc, cfg.batch_size);
            const CostReport rep = net->exact_cost();
            p.cycles = rep.total_cycles;
            p.energy_uj = rep.energy_uj;
            if (opt.on_point) p.artifact = opt.on_point(static_cast<int>(i), lam, *net);
            if (opt.on_history) {
                std::vector<EpochRow> rows = wres.history;
                rows.insert(rows.end(), sres.history.begin(), sres.history.end());
                rows.insert(rows.end(), fres.history.begin(), fres.history.end());
                opt.on_history(static_cast<int>(i), lam, rows);
            }
            res.points.push_back(std::move(p));
        } catch (const std::exception& e) {
            res.failures.push_back({lam, e.what()});
        }
    }
    res.front = pareto_front(res.points, base.target);
    return res;
}

namespace {

// Branch preference for cost ties: higher weight precision first, then the
// standard-conv branch, then the lower CU index.
long long precision_rank(const Precision& p) {
    switch (p.kind) {
    case Precision::Kind::Float: return 3000;
    case Precision::Kind::Affine: return 2000 + p.bits;
    case Precision::Kind::Ternary: return 1000;
    }
    return 0;
}

bool prefer_first_branch(const MappedBranch& b0, const MappedBranch& b1) {
    const long long r0 = precision_rank(b0.precision);
    const long long r1 = precision_rank(b1.precision);
    if (r0 != r1) return r0 > r1;
    const int s0 = b0.op == LayerOp::Conv ? 1 : 0;
    const int s1 = b1.op == LayerOp::Conv ? 1 : 0;
    if (s0 != s1) return s0 > s1;
    return true;
}

} // namespace

BaselineSpec parse_baseline(const std::string& text) {
    BaselineSpec b;
    if (text == "min-cost") {
        b.kind = BaselineSpec::Kind::MinCost;
        return b;
    }
    if (text == "io-heuristic") {
        b.kind = BaselineSpec::Kind::IoHeuristic;
        return b;
    }
    const std::string io_pfx = "io-heuristic:";
    const std::string all_pfx = "all-on-cu:";
    if (text.rfind(io_pfx, 0) == 0) {
        b.kind = BaselineSpec::Kind::IoHeuristic;
        const std::string rest = text.substr(io_pfx.size());
        const size_t colon = rest.find(':');
        check(colon != std::string::npos && colon > 0 && colon + 1 < rest.size(), "E_FLAGS",
              "io-heuristic takes edge and backbone CU names: io-heuristic:EDGE:BACKBONE");
        b.edge_cu = rest.substr(0, colon);
        b.backbone_cu = rest.substr(colon + 1);
        return b;
    }
    if (text.rfind(all_pfx, 0) == 0) {
        b.kind = BaselineSpec::Kind::AllOnCu;
        b.cu = text.substr(all_pfx.size());
        check(!b.cu.empty(), "E_FLAGS", "all-on-cu takes a CU name: all-on-cu:NAME");
        return b;
    }
    fail("E_FLAGS", "unknown baseline kind '" + text + "'");
}

Assignment build_baseline(const BaselineSpec& bs, Network& net, CostTarget target) {
    const PlatformProfile& pf = net.platform();
    std::vector<size_t> mapped_idx;
    for (size_t i = 0; i < net.layers().size(); ++i)
        if (net.layers()[i].is_mapped()) mapped_idx.push_back(i);
    check(!mapped_idx.empty(), "E_BASELINE", "network has no mapped layers");

    int edge = -1, backbone = -1, allcu = -1;
    if (bs.kind == BaselineSpec::Kind::AllOnCu) {
        allcu = pf.cu_index(bs.cu);
    } else if (bs.kind == BaselineSpec::Kind::IoHeuristic) {
        if (!bs.edge_cu.empty()) {
            edge = pf.cu_index(bs.edge_cu);
            backbone = pf.cu_index(bs.backbone_cu);
        } else {
            const auto& brs = net.layers()[mapped_idx[0]].mapped->branches;
            size_t hi = 0, lo = 0;
            for (size_t j = 1; j < brs.size(); ++j) {
                if (precision_rank(brs[j].precision) > precision_rank(brs[hi].precision)) hi = j;
                if (precision_rank(brs[j].precision) < precision_rank(brs[lo].precision)) lo = j;
            }
            check(precision_rank(brs[hi].precision) != precision_rank(brs[lo].precision),
                  "E_BASELINE",
                  "io-heuristic needs CUs with distinct precisions; name edge and backbone "
                  "explicitly");
            edge = brs[hi].cu;
            backbone = brs[lo].cu;
        }
        check(edge != backbone, "E_BASELINE", "edge and backbone CUs must differ");
    }

    Assignment a;
    for (size_t k = 0; k < mapped_idx.size(); ++k) {
        const MappedConvLayer& m = *net.layers()[mapped_idx[k]].mapped;
        const int C = m.geom.c_out;
        const bool contig = m.bank && m.bank->mode == ThetaMode::Contiguous;
        LayerAssignment la;
        la.layer = m.name;

        auto branch_of_cu = [&](int cu) -> size_t {
            for (size_t j = 0; j < m.branches.size(); ++j)
                if (m.branches[j].cu == cu) return j;
            fail("E_BASELINE", "layer '" + m.name + "' has no branch on CU '" +
                                   pf.cu(cu).name + "'");
        };

        if (bs.kind == BaselineSpec::Kind::MinCost) {
            check(m.branches.size() == 2, "E_BASELINE",
                  "min-cost scans layers with exactly two branches");
            const CUProfile& cu0 = pf.cu(m.branches[0].cu);
            const CUProfile& cu1 = pf.cu(m.branches[1].cu);
            auto objective = [&](long long n0) {
                const double l0 = cu_latency(cu0, m.geom, m.branches[0].op, n0);
                const double l1 = cu_latency(cu1, m.geom, m.branches[1].op, C - n0);
                const double mk = std::max(l0, l1);
                if (target == CostTarget::Latency) return mk;
                return cu0.active_power_mw * l0 + cu1.active_power_mw * l1 +
                       pf.idle_power_mw * mk;
            };
            double best = std::numeric_limits<double>::infinity();
            std::vector<long long> argmin;
            for (long long n0 = 0; n0 <= C; ++n0) {
                const double c = objective(n0);
                if (c < best) {
                    best = c;
                    argmin = {n0};
                } else if (c == best) {
                    argmin.push_back(n0);
                }
            }
            const bool pref0 = prefer_first_branch(m.branches[0], m.branches[1]);
            const long long n0 = pref0 ? argmin.back() : argmin.front();
            la.cu_of_channel.assign(static_cast<size_t>(C), m.branches[1].cu);
            for (long long c = 0; c < n0; ++c)
                la.cu_of_channel[static_cast<size_t>(c)] = m.branches[0].cu;
            la.split = contig ? static_cast<int>(n0) : -1;
        } else {
            const int cu = bs.kind == BaselineSpec::Kind::AllOnCu
                               ? allcu
                               : ((k == 0 || k + 1 == mapped_idx.size()) ? edge : backbone);
            const size_t j = branch_of_cu(cu);
            la.cu_of_channel.assign(static_cast<size_t>(C), cu);
            la.split = contig ? (j == 0 ? C : 0) : -1;
        }
        a.layers.push_back(std::move(la));
    }
    return a;
}

namespace {

std::vector<double> to_ranks(const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](int a, int b) { return v[static_cast<size_t>(a)] < v[static_cast<size_t>(b)]; });
    std::vector<double> r(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n &&
               v[static_cast<size_t>(idx[j + 1])] == v[static_cast<size_t>(idx[i])])
            ++j;
        const double avg = static_cast<double>(i + j) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) r[static_cast<size_t>(idx[k])] = avg;
        i = j + 1;
    }
    return r;
}

} // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    check(a.size() == b.size() && a.size() >= 2, "E_INTERNAL",
          "rank correlation needs two matched samples");
    const std::vector<double> ra = to_ranks(a);
    const std::vector<double> rb = to_ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

} // namespace chanmap

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "chanmap/data.hpp"
#include "chanmap/network.hpp"
#include "chanmap/optim.hpp"

namespace chanmap {

struct OptimSettings {
    std::string kind = "adam"; // adam | sgd
    double lr = 1e-3;
    double momentum = 0.9; // sgd only
    double weight_decay = 0.0;

    std::unique_ptr<Optimizer> build(std::vector<Tensor> params) const;
};

struct PhaseSchedule {
    int epochs = 30;
    int patience = 8;
};

struct TrainConfig {
    PhaseSchedule warmup{30, 8};
    PhaseSchedule search{25, 8};
    PhaseSchedule finetune{20, 6};
    int batch_size = 32;
    OptimSettings weight_opt{};
    OptimSettings theta_opt{"adam", 5e-2, 0.9, 0.0};
    double lambda = 0.0; // multiplies the raw relaxed cost during search
    CostTarget target = CostTarget::Latency;
    unsigned long long seed = 0;
    bool anneal_temperature = false; // search phase: 1.0 -> temperature_end
    float temperature_end = 0.2f;
};

struct EpochRow {
    int epoch = 0; // 1-based within the phase
    Phase phase = Phase::Warmup;
    double task_loss = 0.0;    // mean cross-entropy over the epoch's batches
    double cost_relaxed = 0.0; // end-of-epoch relaxed cost
    double cost_exact = 0.0;   // end-of-epoch cost under the argmax assignment
    double total_loss = 0.0;   // task_loss + lambda * cost_relaxed
    double val_accuracy = 0.0;
};

struct PhaseResult {
    std::vector<EpochRow> history;
    double best_val_accuracy = 0.0;
    int best_epoch = 0; // epoch whose checkpoint the network now holds
};

extern const char* kHistoryHeader;
std::string history_csv(const std::vector<EpochRow>& rows);

// Raw relaxed cost of a freshly built supernet (uniform soft assignment).
// Penalty weights quoted relative to this value transfer across platforms.
double initial_relaxed_cost(const NetworkSpec& spec, const PlatformProfile& platform,
                            CostTarget target);

// Trains one phase in place and leaves the network at its best-validation
// checkpoint. Phases must run in order; finetune derives a hard assignment
// from the banks unless one was applied already.
PhaseResult run_phase(Phase phase, Network& net, const TrainConfig& cfg, const Dataset& data);

double evaluate_split(Network& net, const DataSplit& split, const PassConfig& pass,
                      int batch_size);

struct ParetoPoint {
    double lambda = 0.0; // as passed to the sweep
    double val_accuracy = 0.0;
    double test_accuracy = 0.0;
    double cycles = 0.0;
    double energy_uj = 0.0;
    std::string artifact;
};

// Indices of the non-dominated points (val accuracy up, target cost down),
// sorted by cost. A point is dominated when another is at least as accurate
// and at most as costly, strictly better in one.
std::vector<int> pareto_front(const std::vector<ParetoPoint>& points, CostTarget target);

struct SweepOptions {
    std::vector<double> lambdas;
    // When set, each lambda is divided by the initial relaxed cost so values
    // are quoted on the task-loss scale.
    bool normalized = true;
    // Optional hooks: persist a trained point (returns an artifact reference)
    // and consume the point's full history.
    std::function<std::string(int index, double lambda, Network& net)> on_point;
    std::function<void(int index, double lambda, const std::vector<EpochRow>& rows)> on_history;
};

struct SweepFailure {
    double lambda = 0.0;
    std::string error;
};

struct SweepResult {
    std::vector<ParetoPoint> points;
    std::vector<int> front;
    std::vector<SweepFailure> failures;
};

// Full pipeline per lambda with the warmup checkpoint trained once and
// reused. A failing point is recorded and the sweep continues.
SweepResult run_sweep(const NetworkSpec& spec, const PlatformProfile& platform,
                      const TrainConfig& base, const SweepOptions& opt, const Dataset& data);

struct BaselineSpec {
    enum class Kind { AllOnCu, IoHeuristic, MinCost };
    Kind kind = Kind::MinCost;
    std::string cu;       // all-on-cu target
    std::string edge_cu;  // io-heuristic overrides; empty = highest precision
    std::string backbone_cu;
};

// "all-on-cu:NAME", "io-heuristic", "io-heuristic:EDGE:BACKBONE", "min-cost".
BaselineSpec parse_baseline(const std::string& text);

// Fixed reference assignment for the given strategy. min-cost scans every
// split of each layer and keeps the exact-cost optimum, breaking ties toward
// the higher-precision CU.
Assignment build_baseline(const BaselineSpec& spec, Network& net, CostTarget target);

// Rank correlation with average ranks on ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

} // namespace chanmap

// Experiment orchestration: declarative key=value configs, seed sweeps over
// the captioning game, run directories with checkpoints and versioned
// reports, the frozen-agent evaluation battery, comparison tables across
// conditions, and the command line surface.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mhcg/agent.hpp"
#include "mhcg/common.hpp"
#include "mhcg/game.hpp"
#include "mhcg/synthworld.hpp"
#include "mhcg/training.hpp"

namespace mhcg::runner {

struct EvalOpts {
    int retrieval_k = 10;
    int retrieval_seed_begin = 0;  // candidate-sampling seeds, half-open range
    int retrieval_seed_end = 20;
    int probe_pcs = 64;  // cap on retained principal components
    int probe_perms = 5;
    int shared_min_support = 10;
};

struct ExperimentConfig {
    std::string condition = "default";
    std::string method = "mhcg";
    WorldConfig world;
    EncoderPairSpec encoders;
    AgentConfig agent;  // shared dims; each agent's feat_dim comes from encoders
    AcceptanceRule rule;
    TrainHyper hyper;
    GameOpts game;
    // Negative leaves the sampling temperature constant; otherwise it is
    // cosine-annealed from game.temperature down to this value over the run.
    double temperature_end = -1.0;
    EvalOpts eval;
    int n_epochs = 30;
    int eval_every = 5;
    std::vector<uint64_t> seeds;
    std::string output_dir;
};

void validate(const ExperimentConfig& cfg);

// Sampling temperature for the given 1-based epoch under the cosine schedule.
double epoch_temperature(const ExperimentConfig& cfg, int epoch);

AgentConfig agent_a_config(const ExperimentConfig& cfg);
AgentConfig agent_b_config(const ExperimentConfig& cfg);

// Single-file declarative text: [section] headers, key = value lines, #
// comments. Unknown sections or keys and missing required keys raise
// ConfigError naming the offender. config_text renders the full canonical
// snapshot, which parse_config reads back exactly.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);
std::string config_text(const ExperimentConfig& cfg);

// One evaluated quantity. Directions: A/B for per-agent values, AA/AB/BA/BB
// for token-source x vision-source pairs, AB alone for symmetric pairs.
struct MetricRow {
    std::string metric;
    std::string direction;
    double value = 0.0;
};

// Deterministic augmentation-free features for the listed item ids, one row
// per id. Every id must belong to the validation split; train ids raise
// ConfigError so no training item can leak into evaluation.
Mat eval_feature_matrix(const Dataset& ds, const SyntheticEncoder& enc,
                        const std::vector<int>& ids);

// The frozen-agent battery on the validation split: greedy captions, then
// text-text / vision-vision / four-direction text-vision RSA, probe scores,
// retrieval both ways, diversity, positional entropies, private-structure
// biases, shared-sequence statistics, and the degeneracy indicator. Seed
// and epoch only steer the probe permutation streams.
std::vector<MetricRow> evaluate_agents(const AgentConfig& cfg_a, const AgentParams& a,
                                       const AgentConfig& cfg_b, const AgentParams& b,
                                       const SyntheticEncoder& enc_a, const SyntheticEncoder& enc_b,
                                       const Dataset& ds, const EvalOpts& opts, uint64_t seed,
                                       int epoch);

struct SeedResult {
    uint64_t seed = 0;
    bool aborted = false;
    int failure_epoch = -1;   // epoch being played or evaluated when aborted
    std::string failure;      // empty unless aborted
    bool degenerate_final = false;
    std::vector<int> eval_epochs;
    // epoch -> "metric/direction" -> value (NaN when undefined)
    std::map<int, std::map<std::string, double>> metrics;
};

struct RunReport {
    std::string condition;
    std::string method;
    std::string output_dir;
    double vision_rsa = 0.0;  // measured on validation items
    std::vector<SeedResult> seeds;
};

// Runs every seed sequentially and writes the full run directory: config
// snapshot, world snapshot, per-seed checkpoints, epoch logs, metric CSVs
// and summaries, plus combined reports. A RunAbort inside one seed is
// recorded in that seed's reports and the sweep continues.
RunReport run_experiment(const ExperimentConfig& cfg);

// Path helpers shared by the run loop, the re-evaluation entry points, and
// the tests.
std::string seed_dir(const ExperimentConfig& cfg, uint64_t seed);
std::string checkpoint_path(const std::string& seed_dir, int epoch, char agent);
std::vector<int> checkpoint_epochs(const std::string& seed_dir);

// Re-runs the evaluation battery from a saved checkpoint pair against the
// saved world snapshot; epoch < 0 picks the newest checkpoint. Reproduces
// the in-run rows exactly (acceptance rates live in the game logs, not in
// checkpoints, so they are absent here).
std::vector<MetricRow> eval_checkpoint(const ExperimentConfig& cfg, uint64_t seed, int epoch);

struct CompareCell {
    double mean = 0.0;
    double sd = 0.0;
    int n = 0;  // seeds with a finite value
    bool beats_no_com = false;
};

struct CompareTable {
    std::vector<std::string> columns;
    std::vector<std::pair<std::string, std::string>> rows;  // condition, method
    std::vector<std::vector<CompareCell>> cells;            // rows x columns
};

// Aggregates final-epoch metrics across seeds for each run directory: seed
// mean and sample standard deviation per cell, cross-agent cells averaging
// the A->B and B->A directions, and a mark wherever a method's mean exceeds
// the no_com row of the same condition.
CompareTable compare_conditions(const std::vector<std::string>& report_dirs);
void write_compare(const CompareTable& table, const std::string& out_prefix);

// Argument list without the program name. Subcommands: gen-world, run,
// eval, diagnose, compare, chain-test. Returns 0 on success, 1 on
// configuration errors, 2 on runtime aborts.
int cli_main(std::vector<std::string> args);

}  // namespace mhcg::runner

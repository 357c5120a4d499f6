// Self-consistency diagnostic: on a finite candidate set, compare the
// decoder's teacher-forced distribution against the posterior proxy scored
// by the text density at the deterministic vision location.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mhcg/agent.hpp"
#include "mhcg/common.hpp"
#include "mhcg/rng.hpp"
#include "mhcg/synthworld.hpp"

namespace mhcg {

enum class CandProvenance { greedy, sampled, negative };

struct CandidateSet {
    int image_id = 0;
    std::vector<TokenSequence> candidates;  // deduplicated, greedy first
    std::vector<CandProvenance> provenance;
};

struct ConsistencyReport {
    double jsd = 0.0;                  // nats, in [0, ln 2]
    double spearman_logscores = 0.0;   // over the two raw log-score vectors
    bool spearman_defined = true;      // false when either vector is constant
    bool top1_agree = false;
    double rank_percentile = 0.0;      // 0 = decoder's favorite tops the proxy
    bool rank_defined = true;          // false on candidate sets smaller than 2
};

struct DiagOpts {
    int n_samples = 8;
    int n_negatives = 16;
    int n_images = 128;
    double temperature = 1.0;  // stochastic decodes in the candidate pools
};

// The item's greedy caption, n_samples stochastic decodes, and n_negatives
// captions drawn from other pool items' greedy+sampled candidates, all on
// deterministic (unaugmented) views, deduplicated keeping first provenance.
CandidateSet build_candidates(const AgentConfig& cfg, const AgentParams& agent,
                              const SyntheticEncoder& enc, const WorldItem& item,
                              const std::vector<WorldItem>& pool, int n_samples,
                              int n_negatives, double temperature, Rng& rng);

// q ~ softmax of decoder log-probs, p ~ softmax of text-density log-scores
// at the vision density's location; JSD in nats plus rank agreement summaries.
ConsistencyReport self_consistency(const AgentConfig& cfg, const AgentParams& agent,
                                   const Vec& feat, const CandidateSet& cands);

struct CurvePoint {
    int epoch = 0;
    double mean_jsd = 0.0;
    double mean_spearman = 0.0;
    double top1_rate = 0.0;
    double mean_rank_percentile = 0.0;
    int n_images = 0;
};

// One point per checkpoint, averaged over a fixed random subset of the
// evaluation items (the same subset for every checkpoint).
std::vector<CurvePoint> consistency_curve(
    const AgentConfig& cfg, const std::vector<std::pair<int, AgentParams>>& checkpoints,
    const SyntheticEncoder& enc, const std::vector<WorldItem>& val, const DiagOpts& opts,
    uint64_t seed);

// CSV: epoch, agent, mean_jsd, mean_spearman, top1_rate, mean_rank_percentile.
void write_consistency_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, std::vector<CurvePoint>>>& per_agent);

}  // namespace mhcg

// The interaction engine: per-item propose/evaluate/accept decisions on the
// listener's sampled embedding, the acceptance-rule variants used as
// controls, direction runs that collect each listener's training set, and
// the persistent-chain validation of the acceptance kernel.
#pragma once

#include <utility>
#include <vector>

#include "mhcg/agent.hpp"
#include "mhcg/common.hpp"
#include "mhcg/rng.hpp"
#include "mhcg/synthworld.hpp"
#include "mhcg/training.hpp"

namespace mhcg {

enum class RuleKind { mhcg, no_com, all_accept, random_rate_matched, itm_based };
enum class ItmMode { compare_current, sigmoid_draw };

struct AcceptanceRule {
    RuleKind kind = RuleKind::mhcg;
    // random_rate_matched: explicit rate in [0,1], or negative to derive it
    // from a shadow likelihood-ratio pass over the same items and streams.
    double target_rate = -1.0;
    ItmMode itm_mode = ItmMode::compare_current;
};

struct Decision {
    bool accepted = false;
    double log_ratio = 0.0;  // likelihood or matching-score ratio; 0 otherwise
    TokenSequence selected;  // proposal iff accepted, else the current caption
};

struct DirectionLog {
    int n_items = 0;
    int n_accepted = 0;
    double mean_log_ratio = 0.0;
    double matched_rate = -1.0;  // rate the rate-matched rule replayed, if any
    std::vector<std::pair<int, TokenSequence>> selected;  // item id -> caption
    std::vector<TrainExample> training_set;  // listener views + selected captions
};

struct GameOpts {
    double temperature = 1.0;  // speaker and listener caption sampling
    int top_k = 0;             // 0 disables truncation
    double aug_scale = 0.1;    // augmentation noise for training views
};

// One uniform draw; accepts iff log(u) < min(0, log_ratio).
bool accept_log_ratio(double log_ratio, Rng& rng);

// Samples one embedding from the listener's vision density for its own view,
// then compares the two captions' text densities at that point. Draw order:
// the embedding first, the acceptance uniform second.
Decision mh_accept(const AgentConfig& cfg, const AgentParams& listener, const Vec& feat_li,
                   const TokenSequence& proposal, const TokenSequence& current, Rng& rng);

Decision apply_rule(const AgentConfig& cfg, const AcceptanceRule& rule,
                    const AgentParams& listener, const Vec& feat_li,
                    const TokenSequence& proposal, const TokenSequence& current, Rng& rng);

// One pass over the items: both sides encode fresh augmented views, the
// speaker proposes, the listener generates its current caption, the rule
// decides, and the selected caption becomes the listener's training target.
// Every item draws from its own derived streams, so results do not depend
// on iteration order, and equal stream seeds align candidates across rules.
DirectionLog run_direction(const AgentConfig& cfg_s, const AgentParams& speaker,
                           const SyntheticEncoder& enc_s, const AgentConfig& cfg_l,
                           const AgentParams& listener, const SyntheticEncoder& enc_l,
                           const std::vector<WorldItem>& items, const AcceptanceRule& rule,
                           const GameOpts& opts, uint64_t stream_seed);

struct EpochLog {
    DirectionLog ab, ba;  // ab: A speaks and B listens; ba: the reverse
    TrainTrace trace_a, trace_b;
};

// A speaks to B, B trains on the selected captions, then roles swap and A
// trains. No caption state carries across epochs. Updates A and B in place.
EpochLog run_epoch(const AgentConfig& cfg_a, AgentParams& a, const SyntheticEncoder& enc_a,
                   const AgentConfig& cfg_b, AgentParams& b, const SyntheticEncoder& enc_b,
                   const std::vector<WorldItem>& items, const AcceptanceRule& rule,
                   const GameOpts& opts, const TrainHyper& hyper, uint64_t epoch_seed,
                   bool a_speaks_first = true);

// Enumerable-state validation of the acceptance kernel: an independence
// chain whose proposal weights cancel in the ratio, so the likelihood ratio
// alone targets the density-weighted proposal distribution.
struct ChainSpec {
    std::vector<GaussParams> densities;    // per candidate state
    std::vector<double> proposal_weights;  // positive; normalized internally
    Vec h;                                 // fixed heard embedding
};

std::vector<double> run_chain_exactness_test(const ChainSpec& spec, long n_steps, Rng& rng);

}  // namespace mhcg

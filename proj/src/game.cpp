#include "mhcg/game.hpp"

#include <algorithm>
#include <cmath>

namespace mhcg {

namespace {

// Per-item stream purposes; combined with the direction stream seed and the
// item id so per-item randomness is independent of processing order.
constexpr uint64_t kTagSpeakView = 0x7376;
constexpr uint64_t kTagListView = 0x6c76;
constexpr uint64_t kTagSpeakDecode = 0x7364;
constexpr uint64_t kTagListDecode = 0x6c64;
constexpr uint64_t kTagAccept = 0x6163;
constexpr uint64_t kTagReplay = 0x7272;
constexpr uint64_t kTagFirstDirection = 0x6162;
constexpr uint64_t kTagSecondDirection = 0x6261;
constexpr uint64_t kTagUpdateA = 0x7561;
constexpr uint64_t kTagUpdateB = 0x7562;

double stable_sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

bool accept_log_ratio(double log_ratio, Rng& rng) {
    return std::log(rng.uniform()) < std::min(0.0, log_ratio);
}

Decision mh_accept(const AgentConfig& cfg, const AgentParams& listener, const Vec& feat_li,
                   const TokenSequence& proposal, const TokenSequence& current, Rng& rng) {
    const auto vis = density_params(cfg, listener, Modality::vis,
                                    vis_project(cfg, listener, feat_li));
    const Vec h = sample_embedding(vis, rng);
    const auto lam_prop =
        density_params(cfg, listener, Modality::text, text_encode(cfg, listener, proposal));
    const auto lam_curr =
        density_params(cfg, listener, Modality::text, text_encode(cfg, listener, current));
    Decision d;
    d.log_ratio = log_density(lam_prop, h) - log_density(lam_curr, h);
    if (!std::isfinite(d.log_ratio))
        throw RunAbort("non-finite likelihood ratio in acceptance step");
    d.accepted = accept_log_ratio(d.log_ratio, rng);
    d.selected = d.accepted ? proposal : current;
    return d;
}

Decision apply_rule(const AgentConfig& cfg, const AcceptanceRule& rule,
                    const AgentParams& listener, const Vec& feat_li,
                    const TokenSequence& proposal, const TokenSequence& current, Rng& rng) {
    Decision d;
    switch (rule.kind) {
        case RuleKind::mhcg:
            return mh_accept(cfg, listener, feat_li, proposal, current, rng);
        case RuleKind::no_com:
            d.accepted = false;
            break;
        case RuleKind::all_accept:
            d.accepted = true;
            break;
        case RuleKind::random_rate_matched:
            if (rule.target_rate < 0.0 || rule.target_rate > 1.0)
                throw ConfigError("rate-matched rule needs a target rate in [0,1]");
            d.accepted = rng.uniform() < rule.target_rate;
            break;
        case RuleKind::itm_based: {
            d.log_ratio = itm_score(cfg, listener, feat_li, proposal) -
                          itm_score(cfg, listener, feat_li, current);
            if (!std::isfinite(d.log_ratio))
                throw RunAbort("non-finite matching score in acceptance step");
            if (rule.itm_mode == ItmMode::compare_current)
                d.accepted = d.log_ratio > 0.0;  // exact ties reject
            else
                d.accepted = rng.uniform() < stable_sigmoid(d.log_ratio);
            break;
        }
    }
    d.selected = d.accepted ? proposal : current;
    return d;
}

DirectionLog run_direction(const AgentConfig& cfg_s, const AgentParams& speaker,
                           const SyntheticEncoder& enc_s, const AgentConfig& cfg_l,
                           const AgentParams& listener, const SyntheticEncoder& enc_l,
                           const std::vector<WorldItem>& items, const AcceptanceRule& rule,
                           const GameOpts& opts, uint64_t stream_seed) {
    if (cfg_s.n_vocab != cfg_l.n_vocab || cfg_s.seq_len != cfg_l.seq_len)
        throw ConfigError("speaker and listener token spaces differ");
    if (items.empty()) throw ConfigError("run_direction: no items");

    struct Candidates {
        Vec feat_l;
        TokenSequence proposal, current;
    };
    auto make_candidates = [&](const WorldItem& item) {
        const uint64_t id = static_cast<uint64_t>(item.id);
        Rng r_sv(mix_seed({stream_seed, id, kTagSpeakView}));
        Rng r_lv(mix_seed({stream_seed, id, kTagListView}));
        Rng r_sd(mix_seed({stream_seed, id, kTagSpeakDecode}));
        Rng r_ld(mix_seed({stream_seed, id, kTagListDecode}));
        Candidates c;
        const Vec feat_s = encode_view(enc_s, item, opts.aug_scale, r_sv);
        c.feat_l = encode_view(enc_l, item, opts.aug_scale, r_lv);
        c.proposal = decode_sample(cfg_s, speaker, feat_s, opts.temperature, opts.top_k, r_sd);
        c.current = decode_sample(cfg_l, listener, c.feat_l, opts.temperature, opts.top_k, r_ld);
        return c;
    };

    AcceptanceRule effective = rule;
    if (rule.kind == RuleKind::random_rate_matched && rule.target_rate < 0.0) {
        // shadow pass: what the likelihood-ratio rule would have accepted on
        // exactly these candidates and streams sets the rate to match
        int shadow = 0;
        for (const auto& item : items) {
            const auto c = make_candidates(item);
            Rng r_ac(mix_seed({stream_seed, static_cast<uint64_t>(item.id), kTagAccept}));
            shadow += mh_accept(cfg_l, listener, c.feat_l, c.proposal, c.current, r_ac).accepted;
        }
        effective.target_rate = static_cast<double>(shadow) / items.size();
    }

    DirectionLog log;
    if (rule.kind == RuleKind::random_rate_matched) log.matched_rate = effective.target_rate;
    double ratio_sum = 0.0;
    for (const auto& item : items) {
        const auto c = make_candidates(item);
        const uint64_t tag =
            rule.kind == RuleKind::random_rate_matched ? kTagReplay : kTagAccept;
        Rng r_ac(mix_seed({stream_seed, static_cast<uint64_t>(item.id), tag}));
        const Decision d =
            apply_rule(cfg_l, effective, listener, c.feat_l, c.proposal, c.current, r_ac);
        log.n_items += 1;
        log.n_accepted += d.accepted ? 1 : 0;
        ratio_sum += d.log_ratio;
        log.selected.emplace_back(item.id, d.selected);
        log.training_set.push_back({c.feat_l, d.selected});
    }
    log.mean_log_ratio = ratio_sum / log.n_items;
    return log;
}

EpochLog run_epoch(const AgentConfig& cfg_a, AgentParams& a, const SyntheticEncoder& enc_a,
                   const AgentConfig& cfg_b, AgentParams& b, const SyntheticEncoder& enc_b,
                   const std::vector<WorldItem>& items, const AcceptanceRule& rule,
                   const GameOpts& opts, const TrainHyper& hyper, uint64_t epoch_seed,
                   bool a_speaks_first) {
    EpochLog log;
    auto a_speaks = [&](uint64_t direction_tag) {
        log.ab = run_direction(cfg_a, a, enc_a, cfg_b, b, enc_b, items, rule, opts,
                               mix_seed({epoch_seed, direction_tag}));
        Rng r(mix_seed({epoch_seed, kTagUpdateB}));
        b = update_agent(cfg_b, b, log.ab.training_set, hyper, r, &log.trace_b);
    };
    auto b_speaks = [&](uint64_t direction_tag) {
        log.ba = run_direction(cfg_b, b, enc_b, cfg_a, a, enc_a, items, rule, opts,
                               mix_seed({epoch_seed, direction_tag}));
        Rng r(mix_seed({epoch_seed, kTagUpdateA}));
        a = update_agent(cfg_a, a, log.ba.training_set, hyper, r, &log.trace_a);
    };
    if (a_speaks_first) {
        a_speaks(kTagFirstDirection);
        b_speaks(kTagSecondDirection);
    } else {
        b_speaks(kTagFirstDirection);
        a_speaks(kTagSecondDirection);
    }
    return log;
}

std::vector<double> run_chain_exactness_test(const ChainSpec& spec, long n_steps, Rng& rng) {
    const int n = static_cast<int>(spec.densities.size());
    if (n < 1 || n > 1024) throw ConfigError("chain test needs 1..1024 states");
    if (static_cast<int>(spec.proposal_weights.size()) != n)
        throw ConfigError("chain test: weight count mismatch");
    if (n_steps < 1) throw ConfigError("chain test: need at least one step");

    std::vector<double> cum(n);
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        if (!(spec.proposal_weights[i] > 0.0))
            throw ConfigError("chain test: proposal weights must be positive");
        total += spec.proposal_weights[i];
        cum[i] = total;
    }
    auto draw_state = [&]() {
        const double u = rng.uniform() * total;
        return static_cast<int>(std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    };

    std::vector<double> logp(n);
    for (int i = 0; i < n; ++i) logp[i] = log_density(spec.densities[i], spec.h);

    int state = draw_state();
    std::vector<double> freq(n, 0.0);
    for (long step = 0; step < n_steps; ++step) {
        const int j = draw_state();
        // independence proposal: its weights cancel against the target's
        // q factor, leaving the bare likelihood ratio
        if (accept_log_ratio(logp[j] - logp[state], rng)) state = j;
        freq[state] += 1.0;
    }
    for (auto& f : freq) f /= static_cast<double>(n_steps);
    return freq;
}

}  // namespace mhcg

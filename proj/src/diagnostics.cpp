#include "mhcg/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "mhcg/metrics.hpp"

namespace mhcg {

namespace {

constexpr uint64_t kTagImageSubset = 0x6973;
constexpr uint64_t kTagCandidates = 0x6364;

std::vector<double> softmax_of(const std::vector<double>& scores) {
    const double mx = *std::max_element(scores.begin(), scores.end());
    std::vector<double> out(scores.size());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) z += out[i] = std::exp(scores[i] - mx);
    for (auto& v : out) v /= z;
    return out;
}

double xlogx(double x) { return x > 0.0 ? x * std::log(x) : 0.0; }

// Jensen-Shannon divergence in nats between two distributions on the same
// support; bounded by ln 2.
double jsd_nats(const std::vector<double>& p, const std::vector<double>& q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        acc += 0.5 * (xlogx(p[i]) + xlogx(q[i])) - xlogx(m);
    }
    return std::max(0.0, acc);
}

int argmax_lowest(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace

CandidateSet build_candidates(const AgentConfig& cfg, const AgentParams& agent,
                              const SyntheticEncoder& enc, const WorldItem& item,
                              const std::vector<WorldItem>& pool, int n_samples,
                              int n_negatives, double temperature, Rng& rng) {
    if (n_samples < 0 || n_negatives < 0)
        throw ConfigError("build_candidates: negative counts");
    CandidateSet set;
    set.image_id = item.id;
    std::set<TokenSequence> seen;
    auto add = [&](TokenSequence seq, CandProvenance prov) {
        if (!seen.insert(seq).second) return;
        set.candidates.push_back(std::move(seq));
        set.provenance.push_back(prov);
    };

    const Vec feat = encode_view(enc, item, 0.0, rng);
    add(decode_greedy(cfg, agent, feat), CandProvenance::greedy);
    for (int s = 0; s < n_samples; ++s)
        add(decode_sample(cfg, agent, feat, temperature, 0, rng), CandProvenance::sampled);

    // other items' pools are greedy + sampled captions; pick an item, then a
    // uniform slot in its pool
    std::vector<int> others;
    for (int i = 0; i < static_cast<int>(pool.size()); ++i)
        if (pool[i].id != item.id) others.push_back(i);
    if (!others.empty()) {
        for (int k = 0; k < n_negatives; ++k) {
            const auto& donor =
                pool[others[rng.below(static_cast<uint64_t>(others.size()))]];
            const Vec dfeat = encode_view(enc, donor, 0.0, rng);
            const uint64_t slot = rng.below(static_cast<uint64_t>(n_samples + 1));
            if (slot == 0)
                add(decode_greedy(cfg, agent, dfeat), CandProvenance::negative);
            else
                add(decode_sample(cfg, agent, dfeat, temperature, 0, rng),
                    CandProvenance::negative);
        }
    }
    return set;
}

ConsistencyReport self_consistency(const AgentConfig& cfg, const AgentParams& agent,
                                   const Vec& feat, const CandidateSet& cands) {
    const int n = static_cast<int>(cands.candidates.size());
    if (n < 1) throw ConfigError("self_consistency: empty candidate set");

    std::vector<double> ell_dec(n), ell_enc(n);
    const auto vis =
        density_params(cfg, agent, Modality::vis, vis_project(cfg, agent, feat));
    for (int i = 0; i < n; ++i) {
        const auto& c = cands.candidates[i];
        ell_dec[i] = decoder_log_prob(cfg, agent, feat, c);
        ell_enc[i] = log_density(
            density_params(cfg, agent, Modality::text, text_encode(cfg, agent, c)),
            vis.loc);
    }

    ConsistencyReport rep;
    if (n < 2) {
        rep.top1_agree = true;
        rep.spearman_defined = false;
        rep.rank_defined = false;
        return rep;
    }

    const auto q = softmax_of(ell_dec);
    const auto p = softmax_of(ell_enc);
    rep.jsd = jsd_nats(p, q);
    const double rho = metrics::spearman(ell_dec, ell_enc);
    rep.spearman_defined = std::isfinite(rho);
    rep.spearman_logscores = rep.spearman_defined ? rho : 0.0;

    const int star_q = argmax_lowest(q);
    const int star_p = argmax_lowest(p);
    rep.top1_agree = star_q == star_p;
    int rank = 0;
    for (int i = 0; i < n; ++i) {
        if (p[i] > p[star_q]) ++rank;
        if (p[i] == p[star_q] && i < star_q) ++rank;
    }
    rep.rank_percentile = static_cast<double>(rank) / (n - 1);
    return rep;
}

std::vector<CurvePoint> consistency_curve(
    const AgentConfig& cfg, const std::vector<std::pair<int, AgentParams>>& checkpoints,
    const SyntheticEncoder& enc, const std::vector<WorldItem>& val, const DiagOpts& opts,
    uint64_t seed) {
    if (val.empty()) throw ConfigError("consistency_curve: no items");
    if (opts.n_images < 1) throw ConfigError("consistency_curve: n_images must be >= 1");

    const int n_take = std::min<int>(opts.n_images, static_cast<int>(val.size()));
    Rng subset_rng(mix_seed({seed, kTagImageSubset}));
    const auto picked = subset_rng.sample_without_replacement(
        static_cast<int>(val.size()), n_take, static_cast<int>(val.size()));

    std::vector<CurvePoint> curve;
    for (const auto& [epoch, params] : checkpoints) {
        CurvePoint pt;
        pt.epoch = epoch;
        int spearman_count = 0;
        for (int idx : picked) {
            const auto& item = val[idx];
            Rng rng(mix_seed({seed, static_cast<uint64_t>(epoch),
                              static_cast<uint64_t>(item.id), kTagCandidates}));
            const auto cands =
                build_candidates(cfg, params, enc, item, val, opts.n_samples,
                                 opts.n_negatives, opts.temperature, rng);
            Rng feat_rng(0);  // deterministic view draws nothing
            const Vec feat = encode_view(enc, item, 0.0, feat_rng);
            const auto rep = self_consistency(cfg, params, feat, cands);
            pt.mean_jsd += rep.jsd;
            pt.top1_rate += rep.top1_agree ? 1.0 : 0.0;
            pt.mean_rank_percentile += rep.rank_percentile;
            if (rep.spearman_defined) {
                pt.mean_spearman += rep.spearman_logscores;
                ++spearman_count;
            }
        }
        pt.n_images = n_take;
        pt.mean_jsd /= n_take;
        pt.top1_rate /= n_take;
        pt.mean_rank_percentile /= n_take;
        pt.mean_spearman = spearman_count > 0 ? pt.mean_spearman / spearman_count : 0.0;
        curve.push_back(pt);
    }
    return curve;
}

void write_consistency_csv(
    const std::string& path,
    const std::vector<std::pair<std::string, std::vector<CurvePoint>>>& per_agent) {
    FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw ConfigError("cannot write " + path);
    std::fprintf(f, "epoch,agent,mean_jsd,mean_spearman,top1_rate,mean_rank_percentile\n");
    for (const auto& [agent, curve] : per_agent)
        for (const auto& pt : curve)
            std::fprintf(f, "%d,%s,%.17g,%.17g,%.17g,%.17g\n", pt.epoch, agent.c_str(),
                         pt.mean_jsd, pt.mean_spearman, pt.top1_rate,
                         pt.mean_rank_percentile);
    std::fclose(f);
}

}  // namespace mhcg

// End-to-end acceptance gate. Nine checks, one [PASS]/[FAIL] line each,
// nonzero exit if any fails. Checks 1-3 pin the arithmetic (kernel
// exactness against an enumerated target, metric equivalence against
// brute-force oracles, loss gradients against finite differences); checks
// 4-8 run the desk-scale experiment battery and test the qualitative
// signatures; check 9 pins determinism and checkpoint persistence.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mhcg/agent.hpp"
#include "mhcg/common.hpp"
#include "mhcg/diagnostics.hpp"
#include "mhcg/game.hpp"
#include "mhcg/metrics.hpp"
#include "mhcg/rng.hpp"
#include "mhcg/runner.hpp"
#include "mhcg/synthworld.hpp"
#include "mhcg/training.hpp"
#include "oracles.hpp"

using namespace mhcg;
namespace fs = std::filesystem;

namespace {

template <class... Args>
std::string fmt(const char* f, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

struct CheckFail : std::runtime_error {
    explicit CheckFail(const std::string& msg) : std::runtime_error(msg) {}
};

void require(bool ok, const std::string& msg) {
    if (!ok) throw CheckFail(msg);
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(bool(f), "cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<double> row_vec(const Mat& m, int i) {
    std::vector<double> v(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index j = 0; j < m.cols(); ++j) v[static_cast<std::size_t>(j)] = m(i, j);
    return v;
}

// ---------------------------------------------------------------------------
// Desk-scale experiment family shared by checks 4-8. One world, one encoder
// geometry, one training recipe; the checks vary only the encoder mix, the
// acceptance rule, and the schedule length.

runner::ExperimentConfig desk_config() {
    runner::ExperimentConfig cfg;
    cfg.world.n_train = 800;
    cfg.world.n_val = 500;
    cfg.world.latent_dim = 24;
    cfg.world.n_categories = 20;
    cfg.world.max_labels_per_item = 3;
    cfg.world.category_scale = 1.0;
    cfg.world.noise_scale = 0.8;
    cfg.world.seed = 101;
    cfg.encoders.mix = 1.0;
    cfg.encoders.feat_dim_a = 32;
    cfg.encoders.feat_dim_b = 32;
    cfg.encoders.row_rank = 2;
    cfg.encoders.seed = 202;
    cfg.agent.n_vocab = 20;
    cfg.agent.seq_len = 5;
    cfg.agent.d_t = 24;
    cfg.agent.d_s = 16;
    cfg.agent.d_h = 32;
    cfg.hyper.optimizer = OptimKind::adam;
    cfg.hyper.lr_vlm = 0.01;
    cfg.hyper.lr_dens = 0.01;
    cfg.hyper.batch_size = 16;
    cfg.game.temperature = 1.5;
    cfg.game.aug_scale = 0.3;
    cfg.temperature_end = 1.0;
    cfg.n_epochs = 30;
    cfg.eval_every = 30;
    cfg.seeds = {101, 102, 103};
    return cfg;
}

std::string run_root() {
    return (fs::temp_directory_path() / "mhcg_acceptance").string();
}

runner::RunReport fresh_run(runner::ExperimentConfig cfg, const std::string& name) {
    cfg.output_dir = run_root() + "/" + name;
    fs::remove_all(cfg.output_dir);
    return runner::run_experiment(cfg);
}

double seed_final(const runner::SeedResult& sr, const std::string& key) {
    require(!sr.aborted,
            fmt("seed %llu aborted at epoch %d: %s",
                static_cast<unsigned long long>(sr.seed), sr.failure_epoch, sr.failure.c_str()));
    return sr.metrics.at(sr.eval_epochs.back()).at(key);
}

// Symmetric cross-agent value: mean of the A->B and B->A directions.
double cross_final(const runner::SeedResult& sr, const std::string& metric) {
    return 0.5 * (seed_final(sr, metric + "/AB") + seed_final(sr, metric + "/BA"));
}

double seed_mean(const runner::RunReport& r,
                 const std::function<double(const runner::SeedResult&)>& f) {
    double s = 0.0;
    for (const auto& sr : r.seeds) s += f(sr);
    return s / static_cast<double>(r.seeds.size());
}

// State threaded through the desk checks: check 4's runs seed checks 5 and
// 7, and check 5's calibrated low-overlap mix seeds checks 6 and 8.
struct GateState {
    runner::ExperimentConfig homo_cfg;
    runner::RunReport homo_game, homo_silent;
    bool homo_ready = false;
    double mix_mid = -1.0;
    double mix_low = -1.0;
};

// ---------------------------------------------------------------------------
// Check 1: the acceptance kernel is an independence sampler whose proposal
// weights cancel, so its long-run state occupancy must match the enumerated
// density-weighted proposal distribution.

std::string check_kernel_exactness() {
    AgentConfig cfg;
    cfg.n_vocab = 3;
    cfg.seq_len = 2;
    cfg.d_t = 4;
    cfg.d_s = 3;
    cfg.d_h = 4;
    cfg.feat_dim = 4;
    const AgentParams p = init_agent(cfg, 71);
    Rng rng(72);
    ChainSpec spec;
    spec.h = Vec(cfg.d_s);
    for (int d = 0; d < cfg.d_s; ++d) spec.h(d) = 0.5 * rng.normal();
    std::vector<double> logp;
    for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
            const TokenSequence seq{a, b};
            spec.densities.push_back(
                density_params(cfg, p, Modality::text, text_encode(cfg, p, seq)));
            spec.proposal_weights.push_back(0.25 + 0.1 * (3 * a + b));
            logp.push_back(log_density(spec.densities.back(), spec.h));
        }
    }
    const double lmax = *std::max_element(logp.begin(), logp.end());
    std::vector<double> target(9);
    double z = 0.0;
    for (int k = 0; k < 9; ++k) {
        target[k] = spec.proposal_weights[k] * std::exp(logp[k] - lmax);
        z += target[k];
    }
    for (auto& t : target) t /= z;

    const auto t0 = std::chrono::steady_clock::now();
    const auto freq = run_chain_exactness_test(spec, 100000, rng);
    const double secs = elapsed_s(t0);
    double tv = 0.0;
    for (int k = 0; k < 9; ++k) tv += std::abs(freq[k] - target[k]);
    tv *= 0.5;
    require(tv < 0.05, fmt("total variation %.4f >= 0.05", tv));
    require(secs < 10.0, fmt("runtime %.2fs >= 10s", secs));
    return fmt("9 states, 1e5 steps: total variation %.4f (< 0.05) in %.2fs", tv, secs);
}

// ---------------------------------------------------------------------------
// Check 2: every statistic with an enumerable definition matches an
// independent brute-force computation on small random instances, and the
// probe score has no systematic offset on tokens independent of the
// features.

std::string check_metric_oracles() {
    double worst = 0.0;
    auto note = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
    Rng rng(81);
    auto int_vec = [&](int n, int hi) {
        std::vector<double> v(static_cast<std::size_t>(n));
        for (auto& x : v) x = static_cast<double>(rng.below(static_cast<uint64_t>(hi)));
        return v;
    };
    auto constant = [](const std::vector<double>& v) {
        return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
    };

    // token and feature dissimilarity matrices
    for (int t = 0; t < 30; ++t) {
        const int n = 2 + t % 7;
        const int L = 3;
        std::vector<TokenSequence> seqs(static_cast<std::size_t>(n), TokenSequence(L));
        for (auto& s : seqs)
            for (auto& tok : s) tok = static_cast<int>(rng.below(4));
        const auto tr = metrics::text_rdm(seqs);
        Mat feats(n, 5);
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < 5; ++d) feats(i, d) = rng.normal();
        const auto vr = metrics::vision_rdm(feats);
        std::size_t idx = 0;
        for (int i = 0; i < n; ++i) {
            for (int j = i + 1; j < n; ++j, ++idx) {
                int mism = 0;
                for (int l = 0; l < L; ++l) mism += seqs[i][l] != seqs[j][l];
                note(tr.condensed[idx], static_cast<double>(mism) / L);
                note(vr.condensed[idx], oracle::cosine_distance(row_vec(feats, i), row_vec(feats, j)));
            }
        }
    }

    // rank correlations on tied integer data
    for (int t = 0; t < 50; ++t) {
        const int n = 3 + t % 6;
        std::vector<double> a = int_vec(n, 4), b = int_vec(n, 4);
        if (constant(a) || constant(b)) continue;
        note(metrics::spearman(a, b), oracle::spearman(a, b));
        note(metrics::kendall_taub(a, b), oracle::kendall_taub(a, b));
    }

    // partial correlations on continuous dissimilarity matrices
    for (int t = 0; t < 30; ++t) {
        const int n = 4 + t % 5;
        auto rand_rdm = [&] {
            Mat f(n, 4);
            for (int i = 0; i < n; ++i)
                for (int d = 0; d < 4; ++d) f(i, d) = rng.normal();
            return metrics::vision_rdm(f);
        };
        const auto x = rand_rdm(), y = rand_rdm(), z = rand_rdm();
        note(metrics::partial_spearman(x, y, z),
             oracle::partial_spearman_by_residuals(x.condensed, y.condensed, z.condensed));
        const double txy = oracle::kendall_taub(x.condensed, y.condensed);
        const double txz = oracle::kendall_taub(x.condensed, z.condensed);
        const double tyz = oracle::kendall_taub(y.condensed, z.condensed);
        note(metrics::kendall_taub_partial(x, y, z),
             (txy - txz * tyz) / std::sqrt((1.0 - txz * txz) * (1.0 - tyz * tyz)));
    }

    // divergence and entropy
    for (int t = 0; t < 30; ++t) {
        const int n = 5 + t % 4;
        std::vector<double> p(static_cast<std::size_t>(n)), q(static_cast<std::size_t>(n));
        double sp = 0.0, sq = 0.0;
        for (int i = 0; i < n; ++i) {
            p[static_cast<std::size_t>(i)] = (t % 2 == 0 && i == 0) ? 0.0 : rng.uniform();
            q[static_cast<std::size_t>(i)] = rng.uniform();
            sp += p[static_cast<std::size_t>(i)];
            sq += q[static_cast<std::size_t>(i)];
        }
        for (int i = 0; i < n; ++i) {
            p[static_cast<std::size_t>(i)] /= sp;
            q[static_cast<std::size_t>(i)] /= sq;
        }
        double d = 0.0;
        for (int i = 0; i < n; ++i) {
            const double m = 0.5 * (p[static_cast<std::size_t>(i)] + q[static_cast<std::size_t>(i)]);
            if (p[static_cast<std::size_t>(i)] > 0.0)
                d += 0.5 * p[static_cast<std::size_t>(i)] * std::log(p[static_cast<std::size_t>(i)] / m);
            if (q[static_cast<std::size_t>(i)] > 0.0)
                d += 0.5 * q[static_cast<std::size_t>(i)] * std::log(q[static_cast<std::size_t>(i)] / m);
        }
        note(metrics::jsd(p, q), d);

        const int L = 2;
        std::vector<TokenSequence> seqs(static_cast<std::size_t>(4 + t % 5), TokenSequence(L));
        for (auto& s : seqs)
            for (auto& tok : s) tok = static_cast<int>(rng.below(3));
        for (int pos = 0; pos < L; ++pos) {
            std::vector<int> counts(3, 0);
            for (const auto& s : seqs) ++counts[static_cast<std::size_t>(s[pos])];
            double h = 0.0;
            for (int c : counts) {
                if (c == 0) continue;
                const double pr = static_cast<double>(c) / static_cast<double>(seqs.size());
                h -= pr * std::log2(pr);
            }
            note(metrics::positional_entropy(seqs, pos), h);
        }
    }

    // shared-set radius and category breadth
    for (int t = 0; t < 30; ++t) {
        const int n = 4 + t % 5;
        Mat feats(n, 4);
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < 4; ++d) feats(i, d) = rng.normal();
        metrics::SharedSequence shared;
        for (int i = 0; i < n; ++i)
            if ((i + t) % 3 != 0) shared.image_rows.push_back(i);
        if (shared.image_rows.size() < 2) shared.image_rows = {0, 1};
        shared.size = static_cast<int>(shared.image_rows.size());

        auto brute_radius = [&](const std::vector<int>& rows) {
            std::vector<std::vector<double>> unit;
            for (int r : rows) {
                auto v = row_vec(feats, r);
                double nrm = 0.0;
                for (double x : v) nrm += x * x;
                nrm = std::sqrt(nrm);
                for (auto& x : v) x /= nrm;
                unit.push_back(v);
            }
            std::vector<double> centroid(4, 0.0);
            for (const auto& v : unit)
                for (int d = 0; d < 4; ++d) centroid[static_cast<std::size_t>(d)] += v[static_cast<std::size_t>(d)] / static_cast<double>(unit.size());
            double r = 0.0;
            for (const auto& v : unit) r += oracle::cosine_distance(v, centroid);
            return r / static_cast<double>(unit.size());
        };
        std::vector<int> all(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
        const double global = metrics::mean_cos_radius(feats, {});
        note(global, brute_radius(all));
        note(metrics::visual_radius(shared, feats, global),
             brute_radius(shared.image_rows) / brute_radius(all));

        std::vector<std::vector<int>> labels(static_cast<std::size_t>(n));
        for (auto& row : labels) {
            const int k = 1 + static_cast<int>(rng.below(3));
            for (int j = 0; j < k; ++j) row.push_back(static_cast<int>(rng.below(6)));
        }
        std::vector<double> counts(6, 0.0);
        double total = 0.0;
        for (int r : shared.image_rows)
            for (int cat : labels[static_cast<std::size_t>(r)]) {
                counts[static_cast<std::size_t>(cat)] += 1.0;
                total += 1.0;
            }
        double h = 0.0, top = 0.0;
        for (double c : counts) {
            if (c == 0.0) continue;
            const double pr = c / total;
            h -= pr * std::log(pr);
            top = std::max(top, pr);
        }
        const auto br = metrics::category_breadth(shared, labels);
        note(br.effective_categories, std::exp(h));
        note(br.top_object_mass, top);
    }
    require(worst < 1e-10, fmt("worst oracle deviation %.3e >= 1e-10", worst));

    // probe null: tokens independent of the features carry no signal
    double null_mean = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        Rng trng(5000 + static_cast<uint64_t>(trial));
        const int n_tr = 120, n_va = 80, V = 6, L = 3, d = 10;
        std::vector<TokenSequence> tok_tr(n_tr, TokenSequence(L)), tok_va(n_va, TokenSequence(L));
        for (auto& s : tok_tr)
            for (auto& tok : s) tok = static_cast<int>(trng.below(V));
        for (auto& s : tok_va)
            for (auto& tok : s) tok = static_cast<int>(trng.below(V));
        Mat vis_tr(n_tr, d), vis_va(n_va, d);
        for (int i = 0; i < n_tr; ++i)
            for (int j = 0; j < d; ++j) vis_tr(i, j) = trng.normal();
        for (int i = 0; i < n_va; ++i)
            for (int j = 0; j < d; ++j) vis_va(i, j) = trng.normal();
        null_mean +=
            metrics::delta_r2(tok_tr, tok_va, vis_tr, vis_va, V, -1, 8, 5, trng).delta_r2_vw;
    }
    null_mean /= 20.0;
    require(std::abs(null_mean) < 0.02, fmt("probe null mean %+.4f outside (-0.02, 0.02)", null_mean));
    return fmt("worst oracle deviation %.2e (< 1e-10); probe null mean %+.4f (|.| < 0.02)", worst,
               null_mean);
}

// ---------------------------------------------------------------------------
// Check 3: analytic gradients of all four losses against central finite
// differences on 10 randomized small instances each.

std::string check_gradients() {
    double worst_rel = 0.0;
    for (int i = 0; i < 10; ++i) {
        AgentConfig cfg;
        cfg.n_vocab = 3 + i % 3;
        cfg.seq_len = 2 + i % 2;
        cfg.d_t = 2 + i % 2;
        cfg.d_s = 2 + i % 3;
        cfg.d_h = 2 + (i + 1) % 3;
        cfg.feat_dim = 2 + (i + 1) % 2;
        cfg.psi = (i % 2 == 0) ? PsiMode::first_token : PsiMode::mean_pool;
        AgentParams p = init_agent(cfg, 300 + static_cast<uint64_t>(i));
        p.itc_temp = 0.05 + 0.02 * (i % 3);
        Rng brng(900 + static_cast<uint64_t>(i));
        std::vector<TrainExample> batch(3);
        for (auto& ex : batch) {
            ex.feat = Vec(cfg.feat_dim);
            for (int j = 0; j < cfg.feat_dim; ++j) ex.feat(j) = brng.normal();
            ex.target.resize(static_cast<std::size_t>(cfg.seq_len));
            for (auto& t : ex.target) t = static_cast<int>(brng.below(static_cast<uint64_t>(cfg.n_vocab)));
        }

        const std::vector<std::pair<const char*, std::function<double(AgentParams&, AgentGrads*)>>>
            losses = {
                {"lm", [&](AgentParams& q, AgentGrads* g) { return lm_loss(cfg, q, batch, g); }},
                {"itc", [&](AgentParams& q, AgentGrads* g) { return itc_loss(cfg, q, batch, g); }},
                {"itm",
                 [&](AgentParams& q, AgentGrads* g) {
                     Rng rng(777);  // identical negatives each evaluation
                     return itm_loss(cfg, q, batch, 2, rng, g);
                 }},
                {"probvlm",
                 [&](AgentParams& q, AgentGrads* g) { return probvlm_loss(cfg, q, batch, g); }},
            };
        for (const auto& [name, fn] : losses) {
            AgentGrads g = zero_grads(cfg);
            fn(p, &g);
            // the density loss defines gradients only on the phi surface
            const bool phi_only = std::string(name) == "probvlm";
            auto rp = tensor_refs(p);
            auto rg = tensor_refs(g);
            const double h = 1e-5;
            auto probe = [&](double& slot, double want, const std::string& tname) {
                const double keep = slot;
                slot = keep + h;
                const double fp = fn(p, nullptr);
                slot = keep - h;
                const double fm = fn(p, nullptr);
                slot = keep;
                const double fd = (fp - fm) / (2.0 * h);
                const double rel =
                    std::abs(fd - want) / std::max(std::abs(fd) + std::abs(want), 1e-2);
                worst_rel = std::max(worst_rel, rel);
                require(rel < 1e-4, fmt("%s grad mismatch at %s (instance %d): fd %.6g analytic %.6g",
                                        name, tname.c_str(), i, fd, want));
            };
            for (std::size_t k = 0; k < rp.size(); ++k) {
                if (phi_only && rp[k].group != ParamGroup::phi) continue;
                if (rp[k].mat) {
                    for (Eigen::Index c = 0; c < rp[k].mat->cols(); ++c)
                        for (Eigen::Index r = 0; r < rp[k].mat->rows(); ++r)
                            probe((*rp[k].mat)(r, c), (*rg[k].mat)(r, c), rp[k].name);
                } else if (rp[k].vec) {
                    for (Eigen::Index j = 0; j < rp[k].vec->size(); ++j)
                        probe((*rp[k].vec)(j), (*rg[k].vec)(j), rp[k].name);
                } else {
                    probe(*rp[k].scalar, *rg[k].scalar, rp[k].name);
                }
            }
        }
    }
    return fmt("4 losses x 10 instances: max relative error %.2e (< 1e-4)", worst_rel);
}

// ---------------------------------------------------------------------------
// Check 4: with identical encoders, playing the game beats never
// communicating on every cross-agent headline metric, seed by seed.

std::string check_game_beats_silence(GateState& st) {
    const auto t0 = std::chrono::steady_clock::now();
    st.homo_cfg = desk_config();
    st.homo_cfg.condition = "homo";
    st.homo_cfg.method = "mhcg";
    st.homo_cfg.rule.kind = RuleKind::mhcg;
    st.homo_cfg.output_dir = run_root() + "/homo_mhcg";
    fs::remove_all(st.homo_cfg.output_dir);
    st.homo_game = runner::run_experiment(st.homo_cfg);

    auto silent = desk_config();
    silent.condition = "homo";
    silent.method = "no_com";
    silent.rule.kind = RuleKind::no_com;
    st.homo_silent = fresh_run(silent, "homo_no_com");
    const double secs = elapsed_s(t0);
    st.homo_ready = true;

    double min_tt = 1e9, min_dr = 1e9, min_i2t = 1e9;
    for (std::size_t s = 0; s < 3; ++s) {
        const auto& g = st.homo_game.seeds[s];
        const auto& n = st.homo_silent.seeds[s];
        const double tt = seed_final(g, "rsa_tt/AB") - seed_final(n, "rsa_tt/AB");
        const double dr = cross_final(g, "delta_r2") - cross_final(n, "delta_r2");
        const double i2t = cross_final(g, "retrieval_i2t") - cross_final(n, "retrieval_i2t");
        min_tt = std::min(min_tt, tt);
        min_dr = std::min(min_dr, dr);
        min_i2t = std::min(min_i2t, i2t);
        require(tt > 0.0 && dr > 0.0 && i2t > 0.0,
                fmt("seed %llu margins: tt %+.3f dR2 %+.3f i2t %+.3f (all must be > 0)",
                    static_cast<unsigned long long>(g.seed), tt, dr, i2t));
    }
    require(secs < 900.0, fmt("runtime %.0fs >= 900s", secs));
    return fmt("3/3 seeds, min margins tt %+.3f dR2 %+.3f i2t %+.3f; %.0fs (< 900s)", min_tt,
               min_dr, min_i2t, secs);
}

// ---------------------------------------------------------------------------
// Check 5: calibrating the encoder mix to vision alignment ~ {1.0, 0.4,
// 0.1} must produce non-increasing cross-agent language alignment and
// retrieval (at most one inversion, and only up to 0.02).

std::string check_mismatch_monotonicity(GateState& st) {
    require(st.homo_ready, "identical-encoder runs unavailable (check 4 failed)");
    auto cfg = desk_config();
    const Dataset ds = generate_dataset(cfg.world);
    const auto mid = calibrate_mix(ds.val, cfg.encoders, cfg.world.latent_dim, 0.4, 0.005, 40);
    const auto low = calibrate_mix(ds.val, cfg.encoders, cfg.world.latent_dim, 0.1, 0.005, 40);
    st.mix_mid = mid.mix;
    st.mix_low = low.mix;

    auto run_at = [&](double mix, const std::string& cond) {
        auto c = desk_config();
        c.condition = cond;
        c.method = "mhcg";
        c.rule.kind = RuleKind::mhcg;
        c.encoders.mix = mix;
        return fresh_run(c, cond + "_mhcg");
    };
    const auto r_mid = run_at(mid.mix, "mid");
    const auto r_low = run_at(low.mix, "low");

    const std::vector<const runner::RunReport*> reports = {&st.homo_game, &r_mid, &r_low};
    const std::vector<std::string> names = {"rsa_tt", "retrieval_i2t", "retrieval_t2i"};
    int inversions = 0;
    double worst_inv = 0.0;
    std::string detail;
    for (const auto& name : names) {
        std::vector<double> v;
        for (const auto* r : reports)
            v.push_back(seed_mean(*r, [&](const runner::SeedResult& sr) {
                return name == "rsa_tt" ? seed_final(sr, "rsa_tt/AB") : cross_final(sr, name);
            }));
        for (int k = 0; k + 1 < 3; ++k) {
            if (v[static_cast<std::size_t>(k + 1)] > v[static_cast<std::size_t>(k)]) {
                ++inversions;
                worst_inv = std::max(worst_inv, v[static_cast<std::size_t>(k + 1)] - v[static_cast<std::size_t>(k)]);
            }
        }
        detail += fmt(" %s %.3f/%.3f/%.3f", name.c_str(), v[0], v[1], v[2]);
    }
    require(inversions == 0 || (inversions == 1 && worst_inv <= 0.02),
            fmt("%d inversions, worst %+.3f (allow one up to 0.02);%s", inversions, worst_inv,
                detail.c_str()));
    return fmt("vision rsa 1.00/%.2f/%.2f;%s; %d inversions", mid.rsa, low.rsa, detail.c_str(),
               inversions);
}

// ---------------------------------------------------------------------------
// Check 6: acceptance-rule controls at low encoder overlap. Always
// accepting collapses the language, random accepting at the matched rate
// retrieves at chance, and the discriminative-accept variant lands strictly
// between random accepting and the likelihood rule.

std::string check_rule_ablations(GateState& st) {
    require(st.mix_low > 0.0, "low-overlap mix unavailable (check 5 failed)");
    auto run_rule = [&](RuleKind kind, const std::string& method) {
        auto c = desk_config();
        c.condition = "ablate";
        c.method = method;
        c.rule.kind = kind;
        c.encoders.mix = st.mix_low;
        c.n_epochs = 45;
        c.eval_every = 45;
        c.temperature_end = 0.9;
        return fresh_run(c, "ablate_" + method);
    };
    const auto mh = run_rule(RuleKind::mhcg, "mhcg");
    const auto aa = run_rule(RuleKind::all_accept, "all_accept");
    const auto rd = run_rule(RuleKind::random_rate_matched, "random_rate_matched");
    const auto it = run_rule(RuleKind::itm_based, "itm_based");

    auto uniq = [](const runner::SeedResult& sr) {
        return 0.5 * (seed_final(sr, "unique_sequences/A") + seed_final(sr, "unique_sequences/B"));
    };
    const double uq_mh = seed_mean(mh, uniq);
    const double uq_aa = seed_mean(aa, uniq);
    const double ratio = uq_aa / uq_mh;
    require(ratio < 0.25, fmt("always-accept unique-sequence ratio %.3f >= 0.25 (%.1f vs %.1f)",
                              ratio, uq_aa, uq_mh));

    auto t2i = [](const runner::SeedResult& sr) { return cross_final(sr, "retrieval_t2i"); };
    const double rd_t2i = seed_mean(rd, t2i);
    require(rd_t2i >= 0.07 && rd_t2i <= 0.13,
            fmt("random-accept t2i %.3f outside the chance band [0.07, 0.13]", rd_t2i));

    auto i2t = [](const runner::SeedResult& sr) { return cross_final(sr, "retrieval_i2t"); };
    const double i2t_rd = seed_mean(rd, i2t);
    const double i2t_it = seed_mean(it, i2t);
    const double i2t_mh = seed_mean(mh, i2t);
    require(i2t_rd < i2t_it && i2t_it < i2t_mh,
            fmt("i2t ordering violated: random %.3f, discriminative %.3f, likelihood %.3f", i2t_rd,
                i2t_it, i2t_mh));
    return fmt("unique-seq ratio %.2f (< 0.25); random t2i %.3f in [0.07, 0.13]; i2t %.3f < %.3f < %.3f",
               ratio, rd_t2i, i2t_rd, i2t_it, i2t_mh);
}

// ---------------------------------------------------------------------------
// Check 7: over the identical-encoder run, each agent's decoder and its
// density heads must agree more at the end than at initialization, for
// every seed (divergence down, rank correlation up).

std::string check_self_consistency(GateState& st) {
    require(st.homo_ready, "identical-encoder run unavailable (check 4 failed)");
    const auto& cfg = st.homo_cfg;
    const Dataset ds = load_dataset(cfg.output_dir + "/world/dataset.txt");
    const SyntheticEncoder enc_a = load_encoder(cfg.output_dir + "/world/encoder_a.txt");
    const SyntheticEncoder enc_b = load_encoder(cfg.output_dir + "/world/encoder_b.txt");
    const AgentConfig cfg_a = runner::agent_a_config(cfg);
    const AgentConfig cfg_b = runner::agent_b_config(cfg);

    double sum_jsd0 = 0.0, sum_jsd1 = 0.0, sum_rho0 = 0.0, sum_rho1 = 0.0;
    int n_curves = 0;
    for (uint64_t seed : cfg.seeds) {
        const std::string dir = runner::seed_dir(cfg, seed);
        const auto epochs = runner::checkpoint_epochs(dir);
        require(epochs.size() >= 2, fmt("seed %llu has %zu checkpoints, need at least 2",
                                        static_cast<unsigned long long>(seed), epochs.size()));
        for (char agent : {'a', 'b'}) {
            std::vector<std::pair<int, AgentParams>> ckpts;
            const AgentConfig& acfg = agent == 'a' ? cfg_a : cfg_b;
            const SyntheticEncoder& enc = agent == 'a' ? enc_a : enc_b;
            for (int epoch : epochs)
                ckpts.push_back({epoch, load_agent(runner::checkpoint_path(dir, epoch, agent), acfg)});
            const auto curve = consistency_curve(acfg, ckpts, enc, ds.val, DiagOpts{}, seed);
            const auto& first = curve.front();
            const auto& last = curve.back();
            require(first.epoch == 0, "first curve point is not the initialization checkpoint");
            require(last.mean_jsd < first.mean_jsd,
                    fmt("seed %llu agent %c: jsd %.3f -> %.3f did not fall",
                        static_cast<unsigned long long>(seed), agent, first.mean_jsd,
                        last.mean_jsd));
            require(last.mean_spearman > first.mean_spearman,
                    fmt("seed %llu agent %c: spearman %+.3f -> %+.3f did not rise",
                        static_cast<unsigned long long>(seed), agent, first.mean_spearman,
                        last.mean_spearman));
            sum_jsd0 += first.mean_jsd;
            sum_jsd1 += last.mean_jsd;
            sum_rho0 += first.mean_spearman;
            sum_rho1 += last.mean_spearman;
            ++n_curves;
        }
    }
    return fmt("3/3 seeds, both agents: mean jsd %.2f -> %.2f, mean spearman %+.2f -> %+.2f",
               sum_jsd0 / n_curves, sum_jsd1 / n_curves, sum_rho0 / n_curves, sum_rho1 / n_curves);
}

// ---------------------------------------------------------------------------
// Check 8: at low overlap with agent A given the wider encoder, A's token
// geometry must lean toward its own visual geometry on seed average; B's
// lean is reported without a verdict.

std::string check_private_structure_bias(GateState& st) {
    require(st.mix_low > 0.0, "low-overlap mix unavailable (check 5 failed)");
    auto c = desk_config();
    c.condition = "asym";
    c.method = "mhcg";
    c.rule.kind = RuleKind::mhcg;
    c.encoders.mix = st.mix_low;
    c.encoders.feat_dim_b = 16;
    const auto r = fresh_run(c, "asym_mhcg");
    const double da = seed_mean(r, [](const runner::SeedResult& sr) {
        return seed_final(sr, "bias_delta/A");
    });
    const double db = seed_mean(r, [](const runner::SeedResult& sr) {
        return seed_final(sr, "bias_delta/B");
    });
    int wins = 0;
    for (const auto& sr : r.seeds) wins += seed_final(sr, "bias_delta/A") > 0.0;
    require(da > 0.0, fmt("mean delta_A %+.3f is not positive", da));
    return fmt("mean delta_A %+.3f (> 0; positive in %d/3 seeds); mean delta_B %+.3f (reported only)",
               da, wins, db);
}

// ---------------------------------------------------------------------------
// Check 9: identical config and seeds rerun to byte-identical summaries,
// and a checkpoint survives a save/load round trip with its greedy decodes
// intact.

std::string check_determinism_persistence() {
    runner::ExperimentConfig cfg;
    cfg.condition = "smoke";
    cfg.method = "mhcg";
    cfg.world.n_train = 60;
    cfg.world.n_val = 40;
    cfg.world.latent_dim = 16;
    cfg.world.n_categories = 6;
    cfg.world.seed = 7;
    cfg.encoders.mix = 0.5;
    cfg.encoders.feat_dim_a = 12;
    cfg.encoders.feat_dim_b = 12;
    cfg.encoders.seed = 8;
    cfg.agent.n_vocab = 6;
    cfg.agent.seq_len = 3;
    cfg.agent.d_t = 8;
    cfg.agent.d_s = 6;
    cfg.agent.d_h = 8;
    cfg.hyper.batch_size = 8;
    cfg.eval.shared_min_support = 3;
    cfg.n_epochs = 4;
    cfg.eval_every = 2;
    cfg.seeds = {11, 12};
    cfg.output_dir = run_root() + "/determinism";

    fs::remove_all(cfg.output_dir);
    runner::run_experiment(cfg);
    auto summaries = [&] {
        std::string all = slurp(cfg.output_dir + "/reports/summary.json");
        for (uint64_t seed : cfg.seeds)
            all += slurp(runner::seed_dir(cfg, seed) + "/reports/summary.json");
        return all;
    };
    const std::string first = summaries();
    fs::remove_all(cfg.output_dir);
    runner::run_experiment(cfg);
    require(summaries() == first, "rerun changed summary.json bytes");

    const AgentConfig cfg_a = runner::agent_a_config(cfg);
    const std::string ckpt = runner::checkpoint_path(runner::seed_dir(cfg, 11), 4, 'a');
    AgentParams loaded = load_agent(ckpt, cfg_a);
    const Dataset ds = load_dataset(cfg.output_dir + "/world/dataset.txt");
    const SyntheticEncoder enc_a = load_encoder(cfg.output_dir + "/world/encoder_a.txt");
    const Mat feats = encode_deterministic(ds.val, enc_a);
    const std::string tmp = run_root() + "/roundtrip.ckpt";
    save_agent(tmp, cfg_a, loaded);
    const AgentParams reloaded = load_agent(tmp, cfg_a);
    int mismatches = 0;
    for (int i = 0; i < feats.rows(); ++i) {
        const Vec f = feats.row(i).transpose();
        if (decode_greedy(cfg_a, loaded, f) != decode_greedy(cfg_a, reloaded, f)) ++mismatches;
    }
    require(mismatches == 0, fmt("%d of %d greedy decodes changed across the round trip",
                                 mismatches, static_cast<int>(feats.rows())));
    return fmt("rerun summaries byte-identical; %d/%d greedy decodes preserved across round trip",
               static_cast<int>(feats.rows()), static_cast<int>(feats.rows()));
}

}  // namespace

int main() {
    GateState st;
    const std::vector<std::pair<std::string, std::function<std::string()>>> checks = {
        {"acceptance kernel matches the enumerated target", check_kernel_exactness},
        {"metrics match brute-force oracles", check_metric_oracles},
        {"loss gradients match finite differences", check_gradients},
        {"game beats no-communication on cross-agent metrics",
         [&] { return check_game_beats_silence(st); }},
        {"cross-agent alignment falls with encoder mismatch",
         [&] { return check_mismatch_monotonicity(st); }},
        {"acceptance-rule ablation signatures",
         [&] { return check_rule_ablations(st); }},
        {"self-consistency improves over training",
         [&] { return check_self_consistency(st); }},
        {"private-structure bias favors the wider agent",
         [&] { return check_private_structure_bias(st); }},
        {"determinism and checkpoint persistence", check_determinism_persistence},
    };
    int failures = 0;
    for (std::size_t i = 0; i < checks.size(); ++i) {
        std::string verdict, detail;
        try {
            detail = checks[i].second();
            verdict = "PASS";
        } catch (const std::exception& e) {
            detail = e.what();
            verdict = "FAIL";
            ++failures;
        }
        std::printf("[%s] %zu %s: %s\n", verdict.c_str(), i + 1, checks[i].first.c_str(),
                    detail.c_str());
        std::fflush(stdout);
    }
    if (failures > 0) std::printf("%d of 9 checks failed\n", failures);
    return failures == 0 ? 0 : 1;
}

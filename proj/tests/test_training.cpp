#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "mhcg/training.hpp"

using namespace mhcg;

namespace {

AgentConfig tiny_cfg() {
    AgentConfig cfg;
    cfg.n_vocab = 3;
    cfg.seq_len = 2;
    cfg.d_t = 2;
    cfg.d_s = 2;
    cfg.d_h = 2;
    cfg.feat_dim = 2;
    return cfg;
}

std::vector<TrainExample> random_batch(const AgentConfig& cfg, int n, uint64_t seed) {
    Rng rng(seed);
    std::vector<TrainExample> batch(n);
    for (auto& ex : batch) {
        ex.feat = Vec(cfg.feat_dim);
        for (int j = 0; j < cfg.feat_dim; ++j) ex.feat(j) = rng.normal();
        ex.target.resize(cfg.seq_len);
        for (auto& t : ex.target)
            t = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.n_vocab)));
    }
    return batch;
}

// Central finite differences over every learnable entry, step 1e-5. The
// density loss defines gradients only on the phi surface (theta is frozen by
// contract even though the loss value depends on it), so callers can restrict
// which group gets probed.
void fd_check_all(AgentParams& p,
                  const std::function<double(AgentParams&, AgentGrads*)>& loss_fn,
                  AgentGrads& analytic, const ParamGroup* only = nullptr) {
    auto rp = tensor_refs(p);
    auto rg = tensor_refs(analytic);
    const double h = 1e-5;
    auto probe = [&](double& slot, double want, const std::string& name) {
        const double keep = slot;
        slot = keep + h;
        const double fp = loss_fn(p, nullptr);
        slot = keep - h;
        const double fm = loss_fn(p, nullptr);
        slot = keep;
        const double fd = (fp - fm) / (2.0 * h);
        const double rel =
            std::abs(fd - want) / std::max(std::abs(fd) + std::abs(want), 1e-2);
        if (rel >= 1e-4) MESSAGE(name, ": fd ", fd, " analytic ", want);
        REQUIRE(rel < 1e-4);
    };
    for (std::size_t i = 0; i < rp.size(); ++i) {
        if (only && rp[i].group != *only) continue;
        if (rp[i].mat) {
            for (Eigen::Index c = 0; c < rp[i].mat->cols(); ++c)
                for (Eigen::Index r = 0; r < rp[i].mat->rows(); ++r)
                    probe((*rp[i].mat)(r, c), (*rg[i].mat)(r, c), rp[i].name);
        } else if (rp[i].vec) {
            for (Eigen::Index j = 0; j < rp[i].vec->size(); ++j)
                probe((*rp[i].vec)(j), (*rg[i].vec)(j), rp[i].name);
        } else {
            probe(*rp[i].scalar, *rg[i].scalar, rp[i].name);
        }
    }
}

AgentConfig varied_cfg(int i) {
    AgentConfig cfg;
    cfg.n_vocab = 3 + i % 3;
    cfg.seq_len = 2 + i % 2;
    cfg.d_t = 2 + i % 2;
    cfg.d_s = 2 + i % 3;
    cfg.d_h = 2 + (i + 1) % 3;
    cfg.feat_dim = 2 + (i + 1) % 2;
    cfg.psi = (i % 2 == 0) ? PsiMode::first_token : PsiMode::mean_pool;
    return cfg;
}

}  // namespace

TEST_CASE("every loss gradient matches central finite differences") {
    for (int i = 0; i < 10; ++i) {
        auto cfg = varied_cfg(i);
        auto p = init_agent(cfg, 100 + i);
        p.itc_temp = 0.05 + 0.02 * (i % 3);
        const auto batch = random_batch(cfg, 3, 500 + i);

        const std::vector<
            std::pair<const char*, std::function<double(AgentParams&, AgentGrads*)>>>
            losses = {
                {"lm", [&](AgentParams& q, AgentGrads* g) { return lm_loss(cfg, q, batch, g); }},
                {"itc",
                 [&](AgentParams& q, AgentGrads* g) { return itc_loss(cfg, q, batch, g); }},
                {"itm",
                 [&](AgentParams& q, AgentGrads* g) {
                     Rng rng(777);  // identical negatives each evaluation
                     return itm_loss(cfg, q, batch, 2, rng, g);
                 }},
                {"probvlm",
                 [&](AgentParams& q, AgentGrads* g) { return probvlm_loss(cfg, q, batch, g); }},
            };
        const ParamGroup phi = ParamGroup::phi;
        for (const auto& [name, fn] : losses) {
            CAPTURE(name);
            CAPTURE(i);
            AgentGrads g = zero_grads(cfg);
            fn(p, &g);
            const bool dens_only = std::string(name) == "probvlm";
            fd_check_all(p, fn, g, dens_only ? &phi : nullptr);
        }
    }
}

TEST_CASE("lm loss is the mean negative sequence log-probability") {
    const auto cfg = tiny_cfg();
    auto p = init_agent(cfg, 11);
    const auto batch = random_batch(cfg, 5, 12);
    double want = 0.0;
    for (const auto& ex : batch) want -= decoder_log_prob(cfg, p, ex.feat, ex.target);
    CHECK(lm_loss(cfg, p, batch) == doctest::Approx(want / 5.0).epsilon(1e-12));
}

TEST_CASE("uniform decoder costs seq_len * log n_vocab") {
    const auto cfg = tiny_cfg();
    AgentParams p = zero_grads(cfg);  // all logits zero, every token equally likely
    const auto batch = random_batch(cfg, 4, 13);
    CHECK(lm_loss(cfg, p, batch) == doctest::Approx(2.0 * std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("a decoder already peaked on the target costs nearly nothing") {
    const auto cfg = tiny_cfg();
    AgentParams p = zero_grads(cfg);
    std::vector<TrainExample> batch(1);
    batch[0].feat = Vec::Zero(2);
    batch[0].target = {1, 2};
    p.dec_out_b[0](1) = 50.0;
    p.dec_out_b[1](2) = 50.0;
    CHECK(lm_loss(cfg, p, batch) < 1e-12);
}

TEST_CASE("contrastive loss on a batch of one is zero with no gradient") {
    const auto cfg = tiny_cfg();
    auto p = init_agent(cfg, 21);
    const auto batch = random_batch(cfg, 1, 22);
    AgentGrads g = zero_grads(cfg);
    CHECK(itc_loss(cfg, p, batch, &g) == 0.0);
    for (auto& r : tensor_refs(g)) {
        if (r.mat) CHECK(r.mat->norm() == 0.0);
        if (r.vec) CHECK(r.vec->norm() == 0.0);
        if (r.scalar) CHECK(*r.scalar == 0.0);
    }
}

TEST_CASE("aligned orthonormal pairs at the sharpest temperature cost nothing") {
    const auto cfg = tiny_cfg();
    AgentParams p = zero_grads(cfg);
    p.proj_vis_w << 1, 0, 0, 1;
    p.proj_text_w << 1, 0, 0, 1;
    p.token_embed << 1, 0, 0, 1, 0, 0;  // token 0 -> e1, token 1 -> e2
    p.itc_temp = 0.01;
    std::vector<TrainExample> batch(2);
    batch[0].feat = Vec(2);
    batch[0].feat << 1, 0;
    batch[0].target = {0, 0};
    batch[1].feat = Vec(2);
    batch[1].feat << 0, 1;
    batch[1].target = {1, 0};
    CHECK(itc_loss(cfg, p, batch) < 1e-6);
}

TEST_CASE("a zero matching head scores log 2 on every pair") {
    const auto cfg = tiny_cfg();
    AgentParams p = zero_grads(cfg);
    const auto batch = random_batch(cfg, 4, 31);
    Rng rng(32);
    CHECK(itm_loss(cfg, p, batch, 2, rng) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("the matching head separates an easy toy and ranks pairs correctly") {
    const auto cfg = tiny_cfg();
    auto p = init_agent(cfg, 41);
    std::vector<TrainExample> batch(2);
    batch[0].feat = Vec(2);
    batch[0].feat << 2, 0;
    batch[0].target = {0, 0};
    batch[1].feat = Vec(2);
    batch[1].feat << 0, 2;
    batch[1].target = {1, 1};
    Rng rng(42);
    double loss = 0.0;
    for (int step = 0; step < 2000; ++step) {
        AgentGrads g = zero_grads(cfg);
        loss = itm_loss(cfg, p, batch, 1, rng, &g);
        auto rp = tensor_refs(p);
        auto rg = tensor_refs(g);
        for (std::size_t i = 0; i < rp.size(); ++i) {
            const double lr = 0.3;
            if (rp[i].mat) *rp[i].mat -= lr * *rg[i].mat;
            if (rp[i].vec) *rp[i].vec -= lr * *rg[i].vec;
            if (rp[i].scalar) *rp[i].scalar -= lr * *rg[i].scalar;
        }
    }
    CHECK(loss < 0.1);
    // every matched pair outscores every mismatched pair
    const double p00 = itm_score(cfg, p, batch[0].feat, batch[0].target);
    const double p11 = itm_score(cfg, p, batch[1].feat, batch[1].target);
    const double n01 = itm_score(cfg, p, batch[0].feat, batch[1].target);
    const double n10 = itm_score(cfg, p, batch[1].feat, batch[0].target);
    CHECK(std::min(p00, p11) > std::max(n01, n10));
}

TEST_CASE("density loss at a perfect unit-scale fit is the Gaussian floor") {
    const auto cfg = tiny_cfg();
    AgentParams p = zero_grads(cfg);  // mu_v = 0 for every input
    // loc rows stay zero; raw rows biased so softplus(raw) + eps = 1 exactly
    const double raw = std::log(std::expm1(1.0 - cfg.eps_scale));
    p.dens_text_b(2) = p.dens_text_b(3) = raw;
    p.dens_vis_b(2) = p.dens_vis_b(3) = raw;
    const auto batch = random_batch(cfg, 3, 51);
    const double want = 2 * 2 * 0.5 * std::log(2.0 * M_PI);  // two heads, two dims
    CHECK(probvlm_loss(cfg, p, batch) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("density training recovers the Gaussian maximum-likelihood fit") {
    const auto cfg = tiny_cfg();
    auto p = init_agent(cfg, 61);
    // same caption everywhere: the text head sees one input, so its optimum
    // is loc = mean(mu_v), scale^2 = per-dim variance of mu_v
    auto batch = random_batch(cfg, 8, 62);
    for (auto& ex : batch) ex.target = {1, 2};
    for (int step = 0; step < 20000; ++step) {
        AgentGrads g = zero_grads(cfg);
        probvlm_loss(cfg, p, batch, &g);
        p.dens_text_w -= 0.05 * g.dens_text_w;
        p.dens_text_b -= 0.05 * g.dens_text_b;
        p.dens_vis_w -= 0.05 * g.dens_vis_w;
        p.dens_vis_b -= 0.05 * g.dens_vis_b;
    }
    Mat mv(8, 2);
    for (int i = 0; i < 8; ++i) mv.row(i) = vis_project(cfg, p, batch[i].feat).transpose();
    const Vec mean = mv.colwise().mean().transpose();
    const auto gp = density_params(cfg, p, Modality::text, text_encode(cfg, p, {1, 2}));
    for (int d = 0; d < 2; ++d) {
        const double var = (mv.col(d).array() - mean(d)).square().mean();
        CHECK(gp.loc(d) == doctest::Approx(mean(d)).epsilon(1e-3));
        CHECK(gp.scale(d) * gp.scale(d) == doctest::Approx(var).epsilon(0.02));
    }
}

TEST_CASE("density gradients never touch the shared parameters") {
    const auto cfg = tiny_cfg();
    auto p = init_agent(cfg, 71);
    const auto batch = random_batch(cfg, 3, 72);
    AgentGrads g = zero_grads(cfg);
    probvlm_loss(cfg, p, batch, &g);
    bool phi_moved = false;
    for (auto& r : tensor_refs(g)) {
        double norm = 0.0;
        if (r.mat) norm = r.mat->norm();
        if (r.vec) norm = r.vec->norm();
        if (r.scalar) norm = std::abs(*r.scalar);
        if (r.group == ParamGroup::theta)
            CHECK(norm == 0.0);
        else
            phi_moved = phi_moved || norm > 0.0;
    }
    CHECK(phi_moved);
}

TEST_CASE("update with zero learning rates is a bitwise no-op") {
    const auto cfg = tiny_cfg();
    auto p = init_agent(cfg, 81);
    const auto before = p;
    TrainHyper hy;
    hy.lr_vlm = 0.0;
    hy.lr_dens = 0.0;
    hy.batch_size = 2;
    Rng rng(82);
    auto after = update_agent(cfg, p, random_batch(cfg, 5, 83), hy, rng);
    CHECK(after.token_embed == before.token_embed);
    CHECK(after.dens_text_w == before.dens_text_w);
    CHECK(after.itm_w == before.itm_w);
    CHECK(after.itc_temp == before.itc_temp);
}

TEST_CASE("update is reproducible and the density phase leaves theta fixed") {
    const auto cfg = tiny_cfg();
    const auto examples = random_batch(cfg, 6, 91);
    TrainHyper hy;
    hy.batch_size = 3;
    hy.lr_vlm = 0.0;  // isolate the density phase for the theta check
    Rng r1(92), r2(92);
    auto p = init_agent(cfg, 93);
    auto a1 = update_agent(cfg, p, examples, hy, r1);
    auto a2 = update_agent(cfg, p, examples, hy, r2);
    CHECK(a1.dens_text_w == a2.dens_text_w);
    CHECK(a1.dens_vis_b == a2.dens_vis_b);
    CHECK(a1.token_embed == p.token_embed);
    CHECK(a1.proj_vis_w == p.proj_vis_w);
    CHECK(a1.itm_w == p.itm_w);
    CHECK(a1.dens_text_w != p.dens_text_w);  // the phi phase actually trained
}

TEST_CASE("repeated updates on one example drive the lm loss down monotonically") {
    const auto cfg = tiny_cfg();
    auto p = init_agent(cfg, 101);
    const auto examples = random_batch(cfg, 1, 102);
    TrainHyper hy;
    hy.batch_size = 1;
    hy.n_vlm_epochs = 60;
    hy.lr_vlm = 0.02;
    hy.weight_itc = 0.0;
    hy.weight_itm = 0.0;
    Rng rng(103);
    TrainTrace trace;
    update_agent(cfg, p, examples, hy, rng, &trace);
    REQUIRE(trace.vlm.size() == 60);
    for (std::size_t e = 1; e < trace.vlm.size(); ++e)
        CHECK(trace.vlm[e].lm <= trace.vlm[e - 1].lm + 1e-9);
    CHECK(trace.vlm.back().lm < trace.vlm.front().lm);
    CHECK(trace.dens.size() == 3);
}

TEST_CASE("adaptive-moment updates run and differ from plain descent") {
    const auto cfg = tiny_cfg();
    auto p = init_agent(cfg, 111);
    const auto examples = random_batch(cfg, 4, 112);
    TrainHyper sgd;
    sgd.batch_size = 2;
    TrainHyper adam = sgd;
    adam.optimizer = OptimKind::adam;
    Rng r1(113), r2(113);
    auto a = update_agent(cfg, p, examples, sgd, r1);
    auto b = update_agent(cfg, p, examples, adam, r2);
    CHECK(a.token_embed != b.token_embed);
    CHECK(b.token_embed.allFinite());
    CHECK(b.itc_temp >= 0.01);
    CHECK(b.itc_temp <= 1.0);
}

TEST_CASE("non-finite parameters abort the update with a diagnostic") {
    const auto cfg = tiny_cfg();
    auto p = init_agent(cfg, 121);
    p.token_embed(0, 0) = std::numeric_limits<double>::quiet_NaN();
    TrainHyper hy;
    Rng rng(122);
    CHECK_THROWS_AS(update_agent(cfg, p, random_batch(cfg, 3, 123), hy, rng), RunAbort);
}

TEST_CASE("hyperparameter validation rejects nonsense") {
    const auto cfg = tiny_cfg();
    auto p = init_agent(cfg, 131);
    const auto examples = random_batch(cfg, 2, 132);
    Rng rng(133);
    TrainHyper hy;
    hy.lr_vlm = -1.0;
    CHECK_THROWS_AS(update_agent(cfg, p, examples, hy, rng), ConfigError);
    hy = TrainHyper{};
    hy.batch_size = 0;
    CHECK_THROWS_AS(update_agent(cfg, p, examples, hy, rng), ConfigError);
    hy = TrainHyper{};
    hy.n_vlm_epochs = 0;
    CHECK_THROWS_AS(update_agent(cfg, p, examples, hy, rng), ConfigError);
}

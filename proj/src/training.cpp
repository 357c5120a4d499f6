// Batch-mean losses with closed-form gradients (the model is affine + tanh
// + softmax throughout) and the two-phase minibatch update.
#include "mhcg/training.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <vector>

namespace mhcg {

namespace {

double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

void check_batch(const AgentConfig& cfg, const std::vector<TrainExample>& batch,
                 const char* who) {
    if (batch.empty()) throw ConfigError(std::string(who) + ": empty batch");
    for (const auto& ex : batch) {
        if (ex.feat.size() != cfg.feat_dim)
            throw ConfigError(std::string(who) + ": feature width mismatch");
        if (static_cast<int>(ex.target.size()) != cfg.seq_len)
            throw ConfigError(std::string(who) + ": sequence length mismatch");
        for (int t : ex.target)
            if (t < 0 || t >= cfg.n_vocab)
                throw ConfigError(std::string(who) + ": token out of range");
    }
}

// Aggregated token+position input that text_encode projects.
Vec psi_forward(const AgentConfig& cfg, const AgentParams& p, const TokenSequence& seq) {
    if (cfg.psi == PsiMode::first_token)
        return (p.token_embed.row(seq[0]) + p.pos_embed.row(0)).transpose();
    Vec acc = Vec::Zero(cfg.d_t);
    for (int l = 0; l < cfg.seq_len; ++l)
        acc += (p.token_embed.row(seq[l]) + p.pos_embed.row(l)).transpose();
    return acc / cfg.seq_len;
}

void text_backward(const AgentConfig& cfg, const AgentParams& p, const TokenSequence& seq,
                   const Vec& dmu, AgentGrads* g) {
    g->proj_text_w += dmu * psi_forward(cfg, p, seq).transpose();
    g->proj_text_b += dmu;
    const Vec dpsi = p.proj_text_w.transpose() * dmu;
    if (cfg.psi == PsiMode::first_token) {
        g->token_embed.row(seq[0]) += dpsi.transpose();
        g->pos_embed.row(0) += dpsi.transpose();
    } else {
        const Vec share = dpsi / cfg.seq_len;
        for (int l = 0; l < cfg.seq_len; ++l) {
            g->token_embed.row(seq[l]) += share.transpose();
            g->pos_embed.row(l) += share.transpose();
        }
    }
}

void vis_backward(const Vec& feat, const Vec& dmu, AgentGrads* g) {
    g->proj_vis_w += dmu * feat.transpose();
    g->proj_vis_b += dmu;
}

}  // namespace

double lm_loss(const AgentConfig& cfg, const AgentParams& p,
               const std::vector<TrainExample>& batch, AgentGrads* grads, double weight) {
    check_batch(cfg, batch, "lm_loss");
    const double inv = 1.0 / batch.size();
    const double scale = weight * inv;
    double total = 0.0;
    for (const auto& ex : batch) {
        const Vec hvis = p.dec_vis_w * ex.feat + p.dec_vis_b;
        std::vector<Vec> hs(cfg.seq_len), probs(cfg.seq_len), prevs(cfg.seq_len);
        Vec prev = p.dec_start;
        for (int l = 0; l < cfg.seq_len; ++l) {
            prevs[l] = prev;
            const Vec pre = hvis + p.dec_prev_w * prev + p.dec_prev_b;
            hs[l] = pre.array().tanh();
            const Vec logits = p.dec_out_w[l] * hs[l] + p.dec_out_b[l];
            const double mx = logits.maxCoeff();
            const Vec expl = (logits.array() - mx).exp();
            const double z = expl.sum();
            probs[l] = expl / z;
            total -= logits(ex.target[l]) - mx - std::log(z);
            prev = p.token_embed.row(ex.target[l]).transpose();
        }
        if (!grads) continue;
        // teacher forcing makes positions independent: prev is a leaf embedding
        Vec dhvis = Vec::Zero(cfg.d_h);
        for (int l = 0; l < cfg.seq_len; ++l) {
            Vec dlogits = probs[l];
            dlogits(ex.target[l]) -= 1.0;
            grads->dec_out_w[l] += scale * dlogits * hs[l].transpose();
            grads->dec_out_b[l] += scale * dlogits;
            const Vec dh = p.dec_out_w[l].transpose() * dlogits;
            const Vec dpre = dh.array() * (1.0 - hs[l].array().square());
            dhvis += dpre;
            grads->dec_prev_w += scale * dpre * prevs[l].transpose();
            grads->dec_prev_b += scale * dpre;
            const Vec dprev = p.dec_prev_w.transpose() * dpre;
            if (l == 0)
                grads->dec_start += scale * dprev;
            else
                grads->token_embed.row(ex.target[l - 1]) += scale * dprev.transpose();
        }
        grads->dec_vis_w += scale * dhvis * ex.feat.transpose();
        grads->dec_vis_b += scale * dhvis;
    }
    return total * inv;
}

double itc_loss(const AgentConfig& cfg, const AgentParams& p,
                const std::vector<TrainExample>& batch, AgentGrads* grads, double weight) {
    check_batch(cfg, batch, "itc_loss");
    const int n = static_cast<int>(batch.size());
    if (n == 1) return 0.0;  // a lone candidate has nothing to contrast with

    Mat zv(n, cfg.d_s), zt(n, cfg.d_s);
    Vec rv(n), rt(n);
    for (int i = 0; i < n; ++i) {
        const Vec mv = vis_project(cfg, p, batch[i].feat);
        const Vec mt = text_encode(cfg, p, batch[i].target);
        rv(i) = std::max(mv.norm(), 1e-12);
        rt(i) = std::max(mt.norm(), 1e-12);
        zv.row(i) = mv.transpose() / rv(i);
        zt.row(i) = mt.transpose() / rt(i);
    }
    const double tau = p.itc_temp;
    const Mat s = zv * zt.transpose() / tau;

    Mat a = s, b = s;  // row and column softmaxes
    for (int i = 0; i < n; ++i) {
        a.row(i) = (s.row(i).array() - s.row(i).maxCoeff()).exp();
        a.row(i) /= a.row(i).sum();
    }
    for (int j = 0; j < n; ++j) {
        b.col(j) = (s.col(j).array() - s.col(j).maxCoeff()).exp();
        b.col(j) /= b.col(j).sum();
    }
    double loss = 0.0;
    for (int i = 0; i < n; ++i) loss -= std::log(a(i, i)) + std::log(b(i, i));
    loss /= 2.0 * n;

    if (grads) {
        Mat ds = (a + b) / (2.0 * n);
        for (int i = 0; i < n; ++i) ds(i, i) -= 1.0 / n;
        grads->itc_temp += weight * (-(ds.array() * s.array()).sum() / tau);
        const Mat dzv = ds * zt / tau;
        const Mat dzt = ds.transpose() * zv / tau;
        for (int i = 0; i < n; ++i) {
            const Vec z1 = zv.row(i).transpose(), d1 = dzv.row(i).transpose();
            const Vec z2 = zt.row(i).transpose(), d2 = dzt.row(i).transpose();
            vis_backward(batch[i].feat, weight * (d1 - z1 * z1.dot(d1)) / rv(i), grads);
            text_backward(cfg, p, batch[i].target, weight * (d2 - z2 * z2.dot(d2)) / rt(i),
                          grads);
        }
    }
    return loss;
}

double itm_loss(const AgentConfig& cfg, const AgentParams& p,
                const std::vector<TrainExample>& batch, int n_neg, Rng& rng,
                AgentGrads* grads, double weight) {
    check_batch(cfg, batch, "itm_loss");
    if (n_neg < 0) throw ConfigError("itm_loss: negative n_neg");
    const int n = static_cast<int>(batch.size());

    std::vector<Vec> mv(n), mt(n);
    for (int i = 0; i < n; ++i) {
        mv[i] = vis_project(cfg, p, batch[i].feat);
        mt[i] = text_encode(cfg, p, batch[i].target);
    }
    struct Pair {
        int i, j;
        double y;
    };
    std::vector<Pair> pairs;
    for (int i = 0; i < n; ++i) {
        pairs.push_back({i, i, 1.0});
        if (n == 1) continue;  // no mismatched caption available
        for (int k = 0; k < n_neg; ++k) {
            int j = static_cast<int>(rng.below(static_cast<uint64_t>(n - 1)));
            if (j >= i) ++j;
            pairs.push_back({i, j, -1.0});
        }
    }
    const double inv = 1.0 / pairs.size();
    const double scale = weight * inv;
    const int ds = cfg.d_s;

    double loss = 0.0;
    std::vector<Vec> dmv(n, Vec::Zero(ds)), dmt(n, Vec::Zero(ds));
    bool any_grad = false;
    for (const auto& pr : pairs) {
        double logit = p.itm_b + p.itm_w(2 * ds) * mv[pr.i].dot(mt[pr.j]);
        logit += p.itm_w.head(ds).dot(mv[pr.i]) + p.itm_w.segment(ds, ds).dot(mt[pr.j]);
        loss += stable_softplus(-pr.y * logit);
        if (!grads) continue;
        any_grad = true;
        const double dlogit = -pr.y * stable_sigmoid(-pr.y * logit);
        grads->itm_w.head(ds) += scale * dlogit * mv[pr.i];
        grads->itm_w.segment(ds, ds) += scale * dlogit * mt[pr.j];
        grads->itm_w(2 * ds) += scale * dlogit * mv[pr.i].dot(mt[pr.j]);
        grads->itm_b += scale * dlogit;
        dmv[pr.i] += dlogit * (p.itm_w.head(ds) + p.itm_w(2 * ds) * mt[pr.j]);
        dmt[pr.j] += dlogit * (p.itm_w.segment(ds, ds) + p.itm_w(2 * ds) * mv[pr.i]);
    }
    if (any_grad) {
        for (int i = 0; i < n; ++i) {
            vis_backward(batch[i].feat, scale * dmv[i], grads);
            text_backward(cfg, p, batch[i].target, scale * dmt[i], grads);
        }
    }
    return loss * inv;
}

double probvlm_loss(const AgentConfig& cfg, const AgentParams& p,
                    const std::vector<TrainExample>& batch, AgentGrads* grads,
                    double weight) {
    check_batch(cfg, batch, "probvlm_loss");
    const double inv = 1.0 / batch.size();
    const double scale = weight * inv;
    const int ds = cfg.d_s;
    double total = 0.0;
    for (const auto& ex : batch) {
        const Vec mu_v = vis_project(cfg, p, ex.feat);  // fixed target, theta frozen
        const Vec mu_t = text_encode(cfg, p, ex.target);
        struct Head {
            const Mat* w;
            const Vec* b;
            const Vec* input;
            Mat* gw;
            Vec* gb;
        };
        const Head heads[2] = {
            {&p.dens_text_w, &p.dens_text_b, &mu_t, grads ? &grads->dens_text_w : nullptr,
             grads ? &grads->dens_text_b : nullptr},
            {&p.dens_vis_w, &p.dens_vis_b, &mu_v, grads ? &grads->dens_vis_w : nullptr,
             grads ? &grads->dens_vis_b : nullptr},
        };
        for (const auto& h : heads) {
            const Vec out = (*h.w) * (*h.input) + (*h.b);
            Vec dout = Vec::Zero(2 * ds);
            for (int d = 0; d < ds; ++d) {
                const double loc = out(d), raw = out(ds + d);
                const double s = stable_softplus(raw) + cfg.eps_scale;
                const double r = mu_v(d) - loc;
                total += std::log(s) + 0.5 * std::log(2.0 * M_PI) + 0.5 * r * r / (s * s);
                if (grads) {
                    dout(d) = -r / (s * s);
                    dout(ds + d) = (1.0 / s - r * r / (s * s * s)) * stable_sigmoid(raw);
                }
            }
            if (grads) {
                *h.gw += scale * dout * h.input->transpose();
                *h.gb += scale * dout;
            }
        }
    }
    return total * inv;
}

namespace {

template <typename F>
void zip_entries(const TensorRef& rp, const TensorRef& rg, F&& fn) {
    if (rp.mat) {
        for (Eigen::Index c = 0; c < rp.mat->cols(); ++c)
            for (Eigen::Index r = 0; r < rp.mat->rows(); ++r)
                fn((*rp.mat)(r, c), (*rg.mat)(r, c));
    } else if (rp.vec) {
        for (Eigen::Index i = 0; i < rp.vec->size(); ++i) fn((*rp.vec)(i), (*rg.vec)(i));
    } else {
        fn(*rp.scalar, *rg.scalar);
    }
}

struct AdamState {
    std::vector<std::vector<double>> m, v;
    long t = 0;
};

double group_grad_norm(AgentGrads& g, ParamGroup group) {
    double sq = 0.0;
    for (auto& r : tensor_refs(g)) {
        if (r.group != group) continue;
        zip_entries(r, r, [&](double& gv, double&) { sq += gv * gv; });
    }
    return std::sqrt(sq);
}

void apply_step(AgentParams& p, AgentGrads& g, ParamGroup group, double lr,
                const TrainHyper& hy, AdamState& st) {
    auto rp = tensor_refs(p);
    auto rg = tensor_refs(g);
    if (hy.optimizer == OptimKind::sgd) {
        for (std::size_t i = 0; i < rp.size(); ++i) {
            if (rp[i].group != group) continue;
            zip_entries(rp[i], rg[i], [&](double& pv, double& gv) { pv -= lr * gv; });
        }
        return;
    }
    if (st.m.empty()) {
        st.m.resize(rp.size());
        st.v.resize(rp.size());
    }
    st.t += 1;
    const double c1 = 1.0 - std::pow(hy.adam_beta1, static_cast<double>(st.t));
    const double c2 = 1.0 - std::pow(hy.adam_beta2, static_cast<double>(st.t));
    for (std::size_t i = 0; i < rp.size(); ++i) {
        if (rp[i].group != group) continue;
        std::size_t k = 0;
        // size lazily on first touch
        zip_entries(rp[i], rg[i], [&](double&, double&) { ++k; });
        if (st.m[i].size() != k) {
            st.m[i].assign(k, 0.0);
            st.v[i].assign(k, 0.0);
        }
        k = 0;
        zip_entries(rp[i], rg[i], [&](double& pv, double& gv) {
            auto& m = st.m[i][k];
            auto& v = st.v[i][k];
            m = hy.adam_beta1 * m + (1.0 - hy.adam_beta1) * gv;
            v = hy.adam_beta2 * v + (1.0 - hy.adam_beta2) * gv * gv;
            pv -= lr * (m / c1) / (std::sqrt(v / c2) + hy.adam_eps);
            ++k;
        });
    }
}

void check_hyper(const TrainHyper& hy) {
    if (hy.lr_vlm < 0 || hy.lr_dens < 0) throw ConfigError("negative learning rate");
    if (hy.n_vlm_epochs < 1 || hy.n_dens_epochs < 1)
        throw ConfigError("epoch counts must be at least 1");
    if (hy.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (hy.n_neg_itm < 0) throw ConfigError("negative n_neg_itm");
    if (hy.weight_itc < 0 || hy.weight_itm < 0 || hy.weight_lm < 0)
        throw ConfigError("negative loss weight");
}

void abort_if_bad(double value, const char* what, int epoch) {
    if (std::isfinite(value)) return;
    char msg[128];
    std::snprintf(msg, sizeof msg, "non-finite %s (%g) in update epoch %d", what, value,
                  epoch);
    throw RunAbort(msg);
}

}  // namespace

AgentParams update_agent(const AgentConfig& cfg, AgentParams agent,
                         const std::vector<TrainExample>& examples,
                         const TrainHyper& hyper, Rng& rng, TrainTrace* trace) {
    validate(cfg);
    check_hyper(hyper);
    check_batch(cfg, examples, "update_agent");

    const int n = static_cast<int>(examples.size());
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto shuffle = [&](std::vector<int>& v) {
        for (int i = n - 1; i > 0; --i)
            std::swap(v[i], v[rng.below(static_cast<uint64_t>(i) + 1)]);
    };
    auto gather = [&](int start) {
        std::vector<TrainExample> b;
        for (int k = start; k < std::min(start + hyper.batch_size, n); ++k)
            b.push_back(examples[order[k]]);
        return b;
    };

    AdamState theta_state, phi_state;
    for (int e = 0; e < hyper.n_vlm_epochs; ++e) {
        shuffle(order);
        EpochLoss el;
        int batches = 0;
        for (int start = 0; start < n; start += hyper.batch_size, ++batches) {
            const auto b = gather(start);
            AgentGrads grads = zero_grads(cfg);
            double l_lm = 0, l_itc = 0, l_itm = 0;
            if (hyper.weight_lm > 0) l_lm = lm_loss(cfg, agent, b, &grads, hyper.weight_lm);
            if (hyper.weight_itc > 0)
                l_itc = itc_loss(cfg, agent, b, &grads, hyper.weight_itc);
            if (hyper.weight_itm > 0)
                l_itm = itm_loss(cfg, agent, b, hyper.n_neg_itm, rng, &grads,
                                 hyper.weight_itm);
            abort_if_bad(l_lm, "lm loss", e);
            abort_if_bad(l_itc, "itc loss", e);
            abort_if_bad(l_itm, "itm loss", e);
            const double gn = group_grad_norm(grads, ParamGroup::theta);
            abort_if_bad(gn, "grad norm", e);
            apply_step(agent, grads, ParamGroup::theta, hyper.lr_vlm, hyper, theta_state);
            agent.itc_temp = std::min(1.0, std::max(0.01, agent.itc_temp));
            el.lm += l_lm;
            el.itc += l_itc;
            el.itm += l_itm;
            el.grad_norm += gn;
        }
        if (trace) {
            el.lm /= batches;
            el.itc /= batches;
            el.itm /= batches;
            el.grad_norm /= batches;
            trace->vlm.push_back(el);
        }
    }
    for (int e = 0; e < hyper.n_dens_epochs; ++e) {
        shuffle(order);
        EpochLoss el;
        int batches = 0;
        for (int start = 0; start < n; start += hyper.batch_size, ++batches) {
            const auto b = gather(start);
            AgentGrads grads = zero_grads(cfg);
            const double l = probvlm_loss(cfg, agent, b, &grads, 1.0);
            abort_if_bad(l, "density loss", e);
            const double gn = group_grad_norm(grads, ParamGroup::phi);
            abort_if_bad(gn, "density grad norm", e);
            apply_step(agent, grads, ParamGroup::phi, hyper.lr_dens, hyper, phi_state);
            el.probvlm += l;
            el.grad_norm += gn;
        }
        if (trace) {
            el.probvlm /= batches;
            el.grad_norm /= batches;
            trace->dens.push_back(el);
        }
    }
    return agent;
}

}  // namespace mhcg

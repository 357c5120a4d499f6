#include "mhcg/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

namespace mhcg {

namespace {

constexpr uint64_t kTagInit = 0x6167;

double softplus(double x) {
    // stable in both tails
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

Mat gaussian_mat(int rows, int cols, double std, Rng& rng) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = std * rng.normal();
    return m;
}

Vec log_softmax(const Vec& logits) {
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    return logits.array() - lse;
}

Vec embed_prev(const AgentParams& p, const TokenSequence& seq, int pos) {
    return pos == 0 ? p.dec_start : Vec(p.token_embed.row(seq[pos - 1]).transpose());
}

Vec position_logits(const AgentParams& p, const Vec& hvis, const Vec& prev_embed, int pos) {
    Vec pre = hvis + p.dec_prev_w * prev_embed + p.dec_prev_b;
    return p.dec_out_w[pos] * pre.array().tanh().matrix() + p.dec_out_b[pos];
}

int argmax_lowest(const Vec& v) {
    int best = 0;
    for (int i = 1; i < v.size(); ++i)
        if (v(i) > v(best)) best = i;
    return best;
}

void check_seq(const AgentConfig& cfg, const TokenSequence& seq) {
    if (static_cast<int>(seq.size()) != cfg.seq_len)
        throw ConfigError("token sequence has wrong length");
    for (int t : seq)
        if (t < 0 || t >= cfg.n_vocab) throw ConfigError("token index out of range");
}

}  // namespace

void validate(const AgentConfig& cfg) {
    if (cfg.n_vocab < 2) throw ConfigError("agent: n_vocab must be >= 2");
    if (cfg.seq_len < 1) throw ConfigError("agent: seq_len must be >= 1");
    if (cfg.d_t < 1 || cfg.d_s < 1 || cfg.d_h < 1 || cfg.feat_dim < 1)
        throw ConfigError("agent: dims must be >= 1");
    if (!(cfg.eps_scale > 0.0)) throw ConfigError("agent: eps_scale must be > 0");
}

std::vector<TensorRef> tensor_refs(AgentParams& p) {
    std::vector<TensorRef> refs;
    auto mat = [&](const char* name, ParamGroup g, Mat& m) {
        refs.push_back({name, g, &m, nullptr, nullptr});
    };
    auto vec = [&](const char* name, ParamGroup g, Vec& v) {
        refs.push_back({name, g, nullptr, &v, nullptr});
    };
    auto scalar = [&](const char* name, ParamGroup g, double& s) {
        refs.push_back({name, g, nullptr, nullptr, &s});
    };
    mat("token_embed", ParamGroup::theta, p.token_embed);
    mat("pos_embed", ParamGroup::theta, p.pos_embed);
    vec("dec_start", ParamGroup::theta, p.dec_start);
    mat("proj_text_w", ParamGroup::theta, p.proj_text_w);
    vec("proj_text_b", ParamGroup::theta, p.proj_text_b);
    mat("proj_vis_w", ParamGroup::theta, p.proj_vis_w);
    vec("proj_vis_b", ParamGroup::theta, p.proj_vis_b);
    mat("dens_text_w", ParamGroup::phi, p.dens_text_w);
    vec("dens_text_b", ParamGroup::phi, p.dens_text_b);
    mat("dens_vis_w", ParamGroup::phi, p.dens_vis_w);
    vec("dens_vis_b", ParamGroup::phi, p.dens_vis_b);
    mat("dec_vis_w", ParamGroup::theta, p.dec_vis_w);
    vec("dec_vis_b", ParamGroup::theta, p.dec_vis_b);
    mat("dec_prev_w", ParamGroup::theta, p.dec_prev_w);
    vec("dec_prev_b", ParamGroup::theta, p.dec_prev_b);
    for (std::size_t l = 0; l < p.dec_out_w.size(); ++l) {
        refs.push_back({"dec_out_w" + std::to_string(l), ParamGroup::theta, &p.dec_out_w[l],
                        nullptr, nullptr});
        refs.push_back({"dec_out_b" + std::to_string(l), ParamGroup::theta, nullptr,
                        &p.dec_out_b[l], nullptr});
    }
    vec("itm_w", ParamGroup::theta, p.itm_w);
    scalar("itm_b", ParamGroup::theta, p.itm_b);
    scalar("itc_temp", ParamGroup::theta, p.itc_temp);
    return refs;
}

AgentParams init_agent(const AgentConfig& cfg, uint64_t seed) {
    validate(cfg);
    Rng rng(mix_seed({seed, kTagInit}));
    AgentParams p;
    p.token_embed = gaussian_mat(cfg.n_vocab, cfg.d_t, 1.0, rng);
    p.pos_embed = gaussian_mat(cfg.seq_len, cfg.d_t, 1.0, rng);
    p.dec_start = gaussian_mat(cfg.d_t, 1, 1.0, rng);
    auto affine = [&](int out, int in) { return gaussian_mat(out, in, 1.0 / std::sqrt(in), rng); };
    p.proj_text_w = affine(cfg.d_s, cfg.d_t);
    p.proj_text_b = Vec::Zero(cfg.d_s);
    p.proj_vis_w = affine(cfg.d_s, cfg.feat_dim);
    p.proj_vis_b = Vec::Zero(cfg.d_s);
    p.dens_text_w = affine(2 * cfg.d_s, cfg.d_s);
    p.dens_text_b = Vec::Zero(2 * cfg.d_s);
    p.dens_vis_w = affine(2 * cfg.d_s, cfg.d_s);
    p.dens_vis_b = Vec::Zero(2 * cfg.d_s);
    p.dec_vis_w = affine(cfg.d_h, cfg.feat_dim);
    p.dec_vis_b = Vec::Zero(cfg.d_h);
    p.dec_prev_w = affine(cfg.d_h, cfg.d_t);
    p.dec_prev_b = Vec::Zero(cfg.d_h);
    p.dec_out_w.reserve(cfg.seq_len);
    p.dec_out_b.reserve(cfg.seq_len);
    for (int l = 0; l < cfg.seq_len; ++l) {
        p.dec_out_w.push_back(affine(cfg.n_vocab, cfg.d_h));
        p.dec_out_b.push_back(Vec::Zero(cfg.n_vocab));
    }
    p.itm_w = gaussian_mat(2 * cfg.d_s + 1, 1, 1.0 / std::sqrt(2 * cfg.d_s + 1), rng);
    p.itm_b = 0.0;
    p.itc_temp = 0.07;
    return p;
}

AgentParams zero_grads(const AgentConfig& cfg) {
    AgentParams g;
    g.token_embed = Mat::Zero(cfg.n_vocab, cfg.d_t);
    g.pos_embed = Mat::Zero(cfg.seq_len, cfg.d_t);
    g.dec_start = Vec::Zero(cfg.d_t);
    g.proj_text_w = Mat::Zero(cfg.d_s, cfg.d_t);
    g.proj_text_b = Vec::Zero(cfg.d_s);
    g.proj_vis_w = Mat::Zero(cfg.d_s, cfg.feat_dim);
    g.proj_vis_b = Vec::Zero(cfg.d_s);
    g.dens_text_w = Mat::Zero(2 * cfg.d_s, cfg.d_s);
    g.dens_text_b = Vec::Zero(2 * cfg.d_s);
    g.dens_vis_w = Mat::Zero(2 * cfg.d_s, cfg.d_s);
    g.dens_vis_b = Vec::Zero(2 * cfg.d_s);
    g.dec_vis_w = Mat::Zero(cfg.d_h, cfg.feat_dim);
    g.dec_vis_b = Vec::Zero(cfg.d_h);
    g.dec_prev_w = Mat::Zero(cfg.d_h, cfg.d_t);
    g.dec_prev_b = Vec::Zero(cfg.d_h);
    g.dec_out_w.assign(cfg.seq_len, Mat::Zero(cfg.n_vocab, cfg.d_h));
    g.dec_out_b.assign(cfg.seq_len, Vec::Zero(cfg.n_vocab));
    g.itm_w = Vec::Zero(2 * cfg.d_s + 1);
    g.itm_b = 0.0;
    g.itc_temp = 0.0;
    return g;
}

Vec text_encode(const AgentConfig& cfg, const AgentParams& p, const TokenSequence& seq) {
    check_seq(cfg, seq);
    Vec h;
    if (cfg.psi == PsiMode::first_token) {
        h = p.token_embed.row(seq[0]).transpose() + p.pos_embed.row(0).transpose();
    } else {
        h = Vec::Zero(cfg.d_t);
        for (int l = 0; l < cfg.seq_len; ++l)
            h += p.token_embed.row(seq[l]).transpose() + p.pos_embed.row(l).transpose();
        h /= static_cast<double>(cfg.seq_len);
    }
    return p.proj_text_w * h + p.proj_text_b;
}

Vec vis_project(const AgentConfig& cfg, const AgentParams& p, const Vec& feat) {
    if (feat.size() != cfg.feat_dim) throw ConfigError("vis_project: feature dim mismatch");
    return p.proj_vis_w * feat + p.proj_vis_b;
}

GaussParams density_params(const AgentConfig& cfg, const AgentParams& p, Modality m,
                           const Vec& mu) {
    if (mu.size() != cfg.d_s) throw ConfigError("density_params: embedding dim mismatch");
    const Mat& w = m == Modality::vis ? p.dens_vis_w : p.dens_text_w;
    const Vec& b = m == Modality::vis ? p.dens_vis_b : p.dens_text_b;
    const Vec out = w * mu + b;
    GaussParams gp;
    gp.loc = out.head(cfg.d_s);
    gp.scale = Vec(cfg.d_s);
    for (int i = 0; i < cfg.d_s; ++i) gp.scale(i) = softplus(out(cfg.d_s + i)) + cfg.eps_scale;
    return gp;
}

Vec sample_embedding(const GaussParams& gp, Rng& rng) {
    Vec x(gp.loc.size());
    for (int i = 0; i < x.size(); ++i) x(i) = gp.loc(i) + gp.scale(i) * rng.normal();
    return x;
}

double log_density(const GaussParams& gp, const Vec& x) {
    if (x.size() != gp.loc.size()) throw ConfigError("log_density: dim mismatch");
    double lp = 0.0;
    for (int i = 0; i < x.size(); ++i) {
        const double z = (x(i) - gp.loc(i)) / gp.scale(i);
        lp += -0.5 * z * z - std::log(gp.scale(i)) - 0.5 * std::log(2.0 * M_PI);
    }
    return lp;
}

TokenSequence decode_greedy(const AgentConfig& cfg, const AgentParams& p, const Vec& feat) {
    const Vec hvis = p.dec_vis_w * feat + p.dec_vis_b;
    TokenSequence seq(cfg.seq_len);
    Vec prev = p.dec_start;
    for (int l = 0; l < cfg.seq_len; ++l) {
        const Vec logits = position_logits(p, hvis, prev, l);
        seq[l] = argmax_lowest(logits);
        prev = p.token_embed.row(seq[l]).transpose();
    }
    return seq;
}

TokenSequence decode_sample(const AgentConfig& cfg, const AgentParams& p, const Vec& feat,
                            double temperature, int top_k, Rng& rng) {
    if (!(temperature > 0.0)) throw ConfigError("decode_sample: temperature must be > 0");
    if (top_k < 0 || top_k > cfg.n_vocab) throw ConfigError("decode_sample: bad top_k");
    const Vec hvis = p.dec_vis_w * feat + p.dec_vis_b;
    TokenSequence seq(cfg.seq_len);
    Vec prev = p.dec_start;
    for (int l = 0; l < cfg.seq_len; ++l) {
        Vec logits = position_logits(p, hvis, prev, l) / temperature;
        if (top_k > 0 && top_k < cfg.n_vocab) {
            std::vector<int> order(cfg.n_vocab);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                if (logits(a) != logits(b)) return logits(a) > logits(b);
                return a < b;
            });
            Vec trunc = Vec::Constant(cfg.n_vocab, -HUGE_VAL);
            for (int k = 0; k < top_k; ++k) trunc(order[k]) = logits(order[k]);
            logits = trunc;
        }
        Vec probs = log_softmax(logits).array().exp();
        double u = rng.uniform();
        int pick = cfg.n_vocab - 1;
        for (int v = 0; v < cfg.n_vocab; ++v) {
            u -= probs(v);
            if (u < 0.0) {
                pick = v;
                break;
            }
        }
        // guard against accumulated rounding putting u just past the end of
        // a truncated support
        if (top_k > 0 && probs(pick) == 0.0) {
            for (int v = cfg.n_vocab - 1; v >= 0; --v)
                if (probs(v) > 0.0) {
                    pick = v;
                    break;
                }
        }
        seq[l] = pick;
        prev = p.token_embed.row(pick).transpose();
    }
    return seq;
}

double decoder_log_prob(const AgentConfig& cfg, const AgentParams& p, const Vec& feat,
                        const TokenSequence& seq) {
    check_seq(cfg, seq);
    const Vec hvis = p.dec_vis_w * feat + p.dec_vis_b;
    double lp = 0.0;
    for (int l = 0; l < cfg.seq_len; ++l) {
        const Vec logits = position_logits(p, hvis, embed_prev(p, seq, l), l);
        lp += log_softmax(logits)(seq[l]);
    }
    return lp;
}

double itm_score(const AgentConfig& cfg, const AgentParams& p, const Vec& feat,
                 const TokenSequence& seq) {
    const Vec mu_v = vis_project(cfg, p, feat);
    const Vec mu_t = text_encode(cfg, p, seq);
    Vec fused(2 * cfg.d_s + 1);
    fused.head(cfg.d_s) = mu_v;
    fused.segment(cfg.d_s, cfg.d_s) = mu_t;
    fused(2 * cfg.d_s) = mu_v.dot(mu_t);
    return p.itm_w.dot(fused) + p.itm_b;
}

uint64_t config_hash(const AgentConfig& cfg) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "v%d L%d dt%d ds%d dh%d fd%d psi%d eps%a", cfg.n_vocab,
                  cfg.seq_len, cfg.d_t, cfg.d_s, cfg.d_h, cfg.feat_dim,
                  static_cast<int>(cfg.psi), cfg.eps_scale);
    uint64_t h = 1469598103934665603ULL;
    for (const char* c = buf; *c; ++c) {
        h ^= static_cast<unsigned char>(*c);
        h *= 1099511628211ULL;
    }
    return h;
}

namespace {

constexpr char kMagic[8] = {'M', 'H', 'C', 'G', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

void write_u32(std::FILE* f, uint32_t v) { std::fwrite(&v, sizeof v, 1, f); }
void write_u64(std::FILE* f, uint64_t v) { std::fwrite(&v, sizeof v, 1, f); }

uint32_t read_u32(std::FILE* f) {
    uint32_t v = 0;
    if (std::fread(&v, sizeof v, 1, f) != 1) throw ConfigError("checkpoint: truncated file");
    return v;
}

uint64_t read_u64(std::FILE* f) {
    uint64_t v = 0;
    if (std::fread(&v, sizeof v, 1, f) != 1) throw ConfigError("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_agent(const std::string& path, const AgentConfig& cfg, AgentParams& p) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw ConfigError("cannot open for writing: " + path);
    std::fwrite(kMagic, 1, 8, f);
    write_u32(f, kCkptVersion);
    write_u64(f, config_hash(cfg));
    const auto refs = tensor_refs(p);
    write_u32(f, static_cast<uint32_t>(refs.size()));
    for (const auto& r : refs) {
        write_u32(f, static_cast<uint32_t>(r.name.size()));
        std::fwrite(r.name.data(), 1, r.name.size(), f);
        if (r.mat) {
            write_u32(f, static_cast<uint32_t>(r.mat->rows()));
            write_u32(f, static_cast<uint32_t>(r.mat->cols()));
            for (int i = 0; i < r.mat->rows(); ++i)
                for (int j = 0; j < r.mat->cols(); ++j) {
                    const double v = (*r.mat)(i, j);
                    std::fwrite(&v, sizeof v, 1, f);
                }
        } else if (r.vec) {
            write_u32(f, static_cast<uint32_t>(r.vec->size()));
            write_u32(f, 1);
            for (int i = 0; i < r.vec->size(); ++i) {
                const double v = (*r.vec)(i);
                std::fwrite(&v, sizeof v, 1, f);
            }
        } else {
            write_u32(f, 1);
            write_u32(f, 1);
            std::fwrite(r.scalar, sizeof(double), 1, f);
        }
    }
    std::fclose(f);
}

AgentParams load_agent(const std::string& path, const AgentConfig& cfg) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw ConfigError("cannot open: " + path);
    char magic[8];
    if (std::fread(magic, 1, 8, f) != 8 || std::memcmp(magic, kMagic, 8) != 0) {
        std::fclose(f);
        throw ConfigError("checkpoint: bad magic in " + path);
    }
    try {
        if (read_u32(f) != kCkptVersion) throw ConfigError("checkpoint: unsupported version");
        if (read_u64(f) != config_hash(cfg))
            throw ConfigError("checkpoint: config hash mismatch (wrong agent shape?)");
        AgentParams p = zero_grads(cfg);
        const auto refs = tensor_refs(p);
        const uint32_t n = read_u32(f);
        if (n != refs.size()) throw ConfigError("checkpoint: tensor count mismatch");
        for (uint32_t t = 0; t < n; ++t) {
            const uint32_t name_len = read_u32(f);
            std::string name(name_len, '\0');
            if (std::fread(name.data(), 1, name_len, f) != name_len)
                throw ConfigError("checkpoint: truncated file");
            const uint32_t rows = read_u32(f);
            const uint32_t cols = read_u32(f);
            const TensorRef* ref = nullptr;
            for (const auto& r : refs)
                if (r.name == name) {
                    ref = &r;
                    break;
                }
            if (!ref) throw ConfigError("checkpoint: unknown tensor " + name);
            auto read_doubles = [&](double* dst, std::size_t count) {
                if (std::fread(dst, sizeof(double), count, f) != count)
                    throw ConfigError("checkpoint: truncated tensor " + name);
            };
            if (ref->mat) {
                if (static_cast<int>(rows) != ref->mat->rows() ||
                    static_cast<int>(cols) != ref->mat->cols())
                    throw ConfigError("checkpoint: shape mismatch for " + name);
                std::vector<double> buf(static_cast<std::size_t>(rows) * cols);
                read_doubles(buf.data(), buf.size());
                for (uint32_t i = 0; i < rows; ++i)
                    for (uint32_t j = 0; j < cols; ++j)
                        (*ref->mat)(i, j) = buf[static_cast<std::size_t>(i) * cols + j];
            } else if (ref->vec) {
                if (static_cast<int>(rows) != ref->vec->size() || cols != 1)
                    throw ConfigError("checkpoint: shape mismatch for " + name);
                read_doubles(ref->vec->data(), rows);
            } else {
                if (rows != 1 || cols != 1)
                    throw ConfigError("checkpoint: shape mismatch for " + name);
                read_doubles(ref->scalar, 1);
            }
        }
        std::fclose(f);
        return p;
    } catch (...) {
        std::fclose(f);
        throw;
    }
}

}  // namespace mhcg

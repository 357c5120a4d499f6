// Per-agent model: token and position embeddings, projections of both
// modalities into a shared space, diagonal-Gaussian density heads over that
// space, a one-step-recurrent autoregressive token decoder conditioned on
// visual features, and a discriminative matching head.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mhcg/common.hpp"
#include "mhcg/rng.hpp"

namespace mhcg {

enum class PsiMode { first_token, mean_pool };

struct AgentConfig {
    int n_vocab = 20;
    int seq_len = 5;
    int d_t = 24;    // token embedding width
    int d_s = 16;    // shared space width
    int d_h = 32;    // decoder hidden width
    int feat_dim = 32;
    PsiMode psi = PsiMode::first_token;
    double eps_scale = 1e-3;  // floor added to softplus'd raw scales
};

void validate(const AgentConfig& cfg);

// One struct holds every learnable tensor; gradients reuse the same layout.
// Group theta covers everything the captioning losses touch; group phi is
// the two density heads, trained separately with theta frozen.
struct AgentParams {
    Mat token_embed;  // n_vocab x d_t
    Mat pos_embed;    // seq_len x d_t
    Vec dec_start;    // previous-token embedding for position 0
    Mat proj_text_w;  // d_s x d_t
    Vec proj_text_b;
    Mat proj_vis_w;  // d_s x feat_dim
    Vec proj_vis_b;
    Mat dens_text_w;  // 2 d_s x d_s, rows split loc / raw scale
    Vec dens_text_b;
    Mat dens_vis_w;  // 2 d_s x d_s
    Vec dens_vis_b;
    Mat dec_vis_w;  // d_h x feat_dim
    Vec dec_vis_b;
    Mat dec_prev_w;  // d_h x d_t
    Vec dec_prev_b;
    std::vector<Mat> dec_out_w;  // per position, n_vocab x d_h
    std::vector<Vec> dec_out_b;
    Vec itm_w;  // 2 d_s + 1
    double itm_b = 0.0;
    double itc_temp = 0.07;  // learnable, clamped to [0.01, 1] after updates
};

using AgentGrads = AgentParams;

enum class ParamGroup { theta, phi };

struct TensorRef {
    std::string name;
    ParamGroup group;
    Mat* mat = nullptr;
    Vec* vec = nullptr;
    double* scalar = nullptr;
};

// Stable enumeration of every tensor; shared by the optimizer, the
// checkpoint writer, and the finite-difference harness.
std::vector<TensorRef> tensor_refs(AgentParams& p);

// Affine weights ~ N(0, 1/fan_in), biases zero, embeddings ~ N(0, 1).
AgentParams init_agent(const AgentConfig& cfg, uint64_t seed);
AgentParams zero_grads(const AgentConfig& cfg);

struct GaussParams {
    Vec loc;
    Vec scale;  // elementwise >= eps_scale
};

// mu^t: embed tokens, add position embeddings, aggregate (first token by
// default, mean pool by config), project.
Vec text_encode(const AgentConfig& cfg, const AgentParams& p, const TokenSequence& seq);

// mu^v: affine projection of a visual feature.
Vec vis_project(const AgentConfig& cfg, const AgentParams& p, const Vec& feat);

enum class Modality { vis, text };

// loc and softplus(raw) + eps_scale from the modality's density head.
GaussParams density_params(const AgentConfig& cfg, const AgentParams& p, Modality m,
                           const Vec& mu);

// loc + scale * standard normal draw.
Vec sample_embedding(const GaussParams& gp, Rng& rng);

// Diagonal Gaussian log-density summed over dimensions.
double log_density(const GaussParams& gp, const Vec& x);

// Greedy decode: argmax logits per position, lowest index on ties.
TokenSequence decode_greedy(const AgentConfig& cfg, const AgentParams& p, const Vec& feat);

// Temperature softmax draw with optional top-k truncation (0 = off).
TokenSequence decode_sample(const AgentConfig& cfg, const AgentParams& p, const Vec& feat,
                            double temperature, int top_k, Rng& rng);

// Teacher-forced sum over positions of log softmax(logits)[token].
double decoder_log_prob(const AgentConfig& cfg, const AgentParams& p, const Vec& feat,
                        const TokenSequence& seq);

// Raw matching logit over the fused representation [mu_v; mu_t; mu_v.mu_t].
double itm_score(const AgentConfig& cfg, const AgentParams& p, const Vec& feat,
                 const TokenSequence& seq);

// Versioned binary checkpoint keyed by tensor name; bit-exact round-trip.
// The stored config hash must match on load.
uint64_t config_hash(const AgentConfig& cfg);
void save_agent(const std::string& path, const AgentConfig& cfg, AgentParams& p);
AgentParams load_agent(const std::string& path, const AgentConfig& cfg);

}  // namespace mhcg

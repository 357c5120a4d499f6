// Synthetic world: multi-label items with category-structured latents, plus
// pairs of frozen random encoders whose representational overlap is set by a
// single mix knob (1 = identical, 0 = independent), calibrated against the
// measured vision-vision rank correlation.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mhcg/common.hpp"
#include "mhcg/rng.hpp"

namespace mhcg {

struct WorldConfig {
    int n_train = 2000;
    int n_val = 500;
    int latent_dim = 16;
    int n_categories = 12;
    int max_labels_per_item = 3;
    double category_scale = 1.0;
    double noise_scale = 0.3;
    uint64_t seed = 0;
};

struct WorldItem {
    int id = 0;
    Vec latent;
    std::vector<int> labels;  // category indices, non-empty, no duplicates
};

struct Dataset {
    std::vector<WorldItem> train;
    std::vector<WorldItem> val;
};

enum class Nonlinearity { tanh_fn, identity };

struct SyntheticEncoder {
    Mat weight;  // feat_dim x latent_dim, unit-norm rows
    Vec bias;
    Nonlinearity nonlinearity = Nonlinearity::tanh_fn;
    int feat_dim = 0;
};

struct EncoderPairSpec {
    double mix = 1.0;  // 1 => encoder B identical to A (equal dims)
    int feat_dim_a = 32;
    int feat_dim_b = 32;
    // Each encoder's weight rows are drawn inside a private random subspace
    // of this dimension, emulating encoders that attend to different aspects
    // of the input. Full-rank rows (row_rank = 0 or >= latent_dim) keep so
    // much shared geometry that two independent encoders still agree at
    // RSA ~ 0.7; rank 2 lets the mix knob sweep RSA from ~0 to 1.
    int row_rank = 2;
    uint64_t seed = 0;
};

// Items whose latent is the scaled sum of their categories' fixed embeddings
// plus isotropic noise. Labels: a uniform count in [1, max_labels_per_item],
// then categories without replacement under a Zipf(1) skew. Deterministic
// given the seed; train and val ids are disjoint.
Dataset generate_dataset(const WorldConfig& cfg);

// Encoder A is random with unit-norm rows; B blends A's rows (padded or
// truncated to feat_dim_b) with an independent random encoder at ratio mix,
// re-normalized per row. Both random draws depend only on spec.seed, so
// varying mix moves B along a fixed path between the two endpoints.
std::pair<SyntheticEncoder, SyntheticEncoder> make_encoder_pair(const EncoderPairSpec& spec,
                                                                int latent_dim);

// nonlinearity(weight * (latent + aug_scale * noise) + bias). No rng draws
// are consumed when aug_scale is zero, which is the deterministic
// validation view.
Vec encode_view(const SyntheticEncoder& enc, const WorldItem& item, double aug_scale, Rng& rng);

// Deterministic views of all items, one row per item.
Mat encode_deterministic(const std::vector<WorldItem>& items, const SyntheticEncoder& enc);

// Spearman correlation between the two encoders' cosine RDMs on the
// deterministic views of the given items.
double measured_vision_rsa(const std::vector<WorldItem>& items, const SyntheticEncoder& enc_a,
                           const SyntheticEncoder& enc_b);

struct CalibrationResult {
    double mix = 1.0;
    double rsa = 1.0;
    int iters = 0;
};

// Bisection on mix until the measured vision-vision RSA on the items is
// within tol of target. Relies on RSA growing with mix.
CalibrationResult calibrate_mix(const std::vector<WorldItem>& items, EncoderPairSpec spec,
                                int latent_dim, double target_rsa, double tol, int max_iter);

// Versioned text round-trip; floats are hex-encoded so reload is bit-exact.
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);
void save_encoder(const std::string& path, const SyntheticEncoder& enc);
SyntheticEncoder load_encoder(const std::string& path);

}  // namespace mhcg

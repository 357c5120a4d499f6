// Evaluation battery: representational dissimilarity matrices, rank
// correlations (plain, partial, tie-aware), linear probes from token
// one-hots to visual principal components, retrieval accuracy, entropy
// and shared-sequence statistics, and a matched-size bootstrap.
#pragma once

#include <cstddef>
#include <vector>

#include "mhcg/common.hpp"
#include "mhcg/rng.hpp"

namespace mhcg::metrics {

enum class RdmKind { hamming_text, cosine_vision };

// Pairwise dissimilarities in condensed form: entry (i,j) with i<j lives at
// condensed_index(n, i, j). Hamming entries lie in [0,1], cosine in [0,2].
struct RDM {
    int n = 0;
    std::vector<double> condensed;
    RdmKind kind = RdmKind::hamming_text;
};

inline std::size_t condensed_index(int n, int i, int j) {
    return static_cast<std::size_t>(i) * n - static_cast<std::size_t>(i) * (i + 1) / 2 +
           (j - i - 1);
}

// Fraction of mismatched token positions.
RDM text_rdm(const std::vector<TokenSequence>& seqs);

// 1 - cosine similarity between feature rows.
RDM vision_rdm(const Mat& feats);

// Average ranks with the mid-rank convention for ties.
std::vector<double> average_ranks(const std::vector<double>& v);

// Spearman rank correlation. NaN when either input has zero rank variance.
double spearman(const std::vector<double>& a, const std::vector<double>& b);
double spearman(const RDM& a, const RDM& b);

// Rank partial correlation (rho_xy - rho_xz rho_yz) / sqrt((1-rho_xz^2)(1-rho_yz^2))
// over the condensed vectors x=t, y=v1, z=v2. A conditioning vector whose
// ranks are constant contributes zero correlation, so the partial collapses
// to the plain coefficient. Throws DegenerateResult when a denominator term
// vanishes (e.g. v1 == v2).
double partial_spearman(const RDM& t, const RDM& v1, const RDM& v2);

// Delta_X = rho(t_X, v_X | v_Y) - rho(t_X, v_Y | v_X).
double bias_delta(const RDM& t_x, const RDM& v_x, const RDM& v_y);

// Tie-corrected Kendall tau-b, O(n log n). NaN when either side is all ties.
double kendall_taub(const std::vector<double>& a, const std::vector<double>& b);

// Same partial-correlation algebra as above with tau_b in place of rho.
double kendall_taub_partial(const RDM& t, const RDM& v1, const RDM& v2);

struct ProbeResult {
    double delta_r2_vw = 0.0;
    std::vector<double> per_pc_r2;
    std::vector<double> per_pc_r2_perm;
    int n_pcs = 0;
    int n_perms = 0;
    bool epsilon_raised = false;  // set when the design was under-determined
};

// Linear probe from token one-hots to visual principal components.
// PCA is fit on the train features; probes are solved by least squares with
// a small Tikhonov term and scored by per-component validation R^2 against a
// permuted-token baseline, combined with explained-variance weights.
// position = -1 probes all positions (concatenated one-hots), otherwise the
// single given position.
ProbeResult delta_r2(const std::vector<TokenSequence>& tok_train,
                     const std::vector<TokenSequence>& tok_val, const Mat& vis_train,
                     const Mat& vis_val, int n_vocab, int position, int n_pcs_cap, int n_perms,
                     Rng& rng);

struct RetrievalResult {
    double i2t = 0.0;
    double t2i = 0.0;
};

// Top-1 accuracy among the true pair plus K-1 distractors drawn without
// replacement, averaged over candidate seeds [seed_begin, seed_end). Scores
// are dots of l2-normalized rows; ties against a distractor count as misses.
RetrievalResult retrieval_top1(const Mat& text_embs, const Mat& img_embs, int K, int seed_begin,
                               int seed_end);

// Empirical token entropy at one position, in bits.
double positional_entropy(const std::vector<TokenSequence>& seqs, int position);

struct SharedSequence {
    TokenSequence seq;
    std::vector<int> image_rows;  // row indices into the caption/feature lists
    int size = 0;
};

// Sequences assigned to at least min_support rows by both caption lists.
std::vector<SharedSequence> shared_sequences(const std::vector<TokenSequence>& caps_a,
                                             const std::vector<TokenSequence>& caps_b,
                                             int min_support);

// Mean cosine distance from the selected rows to their centroid, computed on
// l2-normalized features. Empty rows selects all rows.
double mean_cos_radius(const Mat& feats, const std::vector<int>& rows);

// Radius of a shared sequence's rows divided by the all-rows radius.
double visual_radius(const SharedSequence& shared, const Mat& feats, double global_radius);

struct BreadthResult {
    double effective_categories = 0.0;
    double top_object_mass = 0.0;
};

// Category-presence distribution over the shared rows: exp of its natural
// entropy and its largest mass.
BreadthResult category_breadth(const SharedSequence& shared,
                               const std::vector<std::vector<int>>& labels_per_row);

struct BootstrapResult {
    double mean_a = 0.0;
    double mean_b = 0.0;
    double mean_diff = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
};

// Subsamples the larger list to k = min(|a|,|b|) without replacement each
// iteration and records the difference of subsample means; the CI is the
// empirical 2.5/97.5 percentile of those differences.
BootstrapResult matched_size_bootstrap(const std::vector<double>& a, const std::vector<double>& b,
                                       int iters, Rng& rng);

// Number of distinct sequences.
int diversity(const std::vector<TokenSequence>& seqs);

// Jensen-Shannon divergence between two distributions, in nats.
double jsd(const std::vector<double>& p, const std::vector<double>& q);

}  // namespace mhcg::metrics

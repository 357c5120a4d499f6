#include "mhcg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace mhcg::metrics {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 2) return kNaN;
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) return kNaN;
    return sxy / std::sqrt(sxx * syy);
}

// Shared algebra for the two partial-correlation flavors. A NaN pairwise
// value against the conditioning vector means its ranks were constant; that
// carries no information, so it enters as zero correlation.
double partial_from_pairwise(double rxy, double rxz, double ryz) {
    if (std::isnan(rxz)) rxz = 0.0;
    if (std::isnan(ryz)) ryz = 0.0;
    if (std::abs(rxz) >= 1.0 - 1e-12 || std::abs(ryz) >= 1.0 - 1e-12)
        throw DegenerateResult("partial correlation undefined: conditioning correlation is +/-1");
    return (rxy - rxz * ryz) / std::sqrt((1.0 - rxz * rxz) * (1.0 - ryz * ryz));
}

// Strict inversions (left > right) counted during a bottom-up merge sort.
uint64_t count_inversions(std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<double> buf(n);
    uint64_t inv = 0;
    for (std::size_t width = 1; width < n; width *= 2) {
        for (std::size_t lo = 0; lo + width < n; lo += 2 * width) {
            const std::size_t mid = lo + width, hi = std::min(lo + 2 * width, n);
            std::size_t li = lo, ri = mid, o = lo;
            while (li < mid && ri < hi) {
                if (v[li] <= v[ri]) {
                    buf[o++] = v[li++];
                } else {
                    inv += mid - li;
                    buf[o++] = v[ri++];
                }
            }
            while (li < mid) buf[o++] = v[li++];
            while (ri < hi) buf[o++] = v[ri++];
            std::copy(buf.begin() + lo, buf.begin() + hi, v.begin() + lo);
        }
    }
    return inv;
}

double tie_term(const std::vector<double>& sorted) {
    double t = 0.0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
        const double run = static_cast<double>(j - i + 1);
        t += run * (run - 1.0) / 2.0;
        i = j + 1;
    }
    return t;
}

std::vector<double> ranks_of_rdm(const RDM& r) { return average_ranks(r.condensed); }

void check_same_n(const RDM& a, const RDM& b) {
    if (a.n != b.n) throw ConfigError("rdm size mismatch");
}

}  // namespace

RDM text_rdm(const std::vector<TokenSequence>& seqs) {
    RDM r;
    r.n = static_cast<int>(seqs.size());
    r.kind = RdmKind::hamming_text;
    if (r.n < 2) return r;
    const std::size_t L = seqs[0].size();
    for (const auto& s : seqs)
        if (s.size() != L) throw ConfigError("text_rdm: unequal sequence lengths");
    r.condensed.reserve(static_cast<std::size_t>(r.n) * (r.n - 1) / 2);
    for (int i = 0; i < r.n; ++i) {
        for (int j = i + 1; j < r.n; ++j) {
            int mism = 0;
            for (std::size_t l = 0; l < L; ++l) mism += seqs[i][l] != seqs[j][l];
            r.condensed.push_back(static_cast<double>(mism) / static_cast<double>(L));
        }
    }
    return r;
}

RDM vision_rdm(const Mat& feats) {
    RDM r;
    r.n = static_cast<int>(feats.rows());
    r.kind = RdmKind::cosine_vision;
    if (r.n < 2) return r;
    Mat unit = feats;
    for (int i = 0; i < unit.rows(); ++i) {
        const double nrm = unit.row(i).norm();
        if (nrm > 0.0) unit.row(i) /= nrm;
    }
    r.condensed.reserve(static_cast<std::size_t>(r.n) * (r.n - 1) / 2);
    for (int i = 0; i < r.n; ++i)
        for (int j = i + 1; j < r.n; ++j)
            r.condensed.push_back(1.0 - unit.row(i).dot(unit.row(j)));
    return r;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) { return v[a] < v[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = mid;
        i = j + 1;
    }
    return ranks;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ConfigError("spearman: length mismatch");
    return pearson(average_ranks(a), average_ranks(b));
}

double spearman(const RDM& a, const RDM& b) {
    check_same_n(a, b);
    return spearman(a.condensed, b.condensed);
}

double partial_spearman(const RDM& t, const RDM& v1, const RDM& v2) {
    check_same_n(t, v1);
    check_same_n(t, v2);
    const auto rx = ranks_of_rdm(t), ry = ranks_of_rdm(v1), rz = ranks_of_rdm(v2);
    return partial_from_pairwise(pearson(rx, ry), pearson(rx, rz), pearson(ry, rz));
}

double bias_delta(const RDM& t_x, const RDM& v_x, const RDM& v_y) {
    return partial_spearman(t_x, v_x, v_y) - partial_spearman(t_x, v_y, v_x);
}

double kendall_taub(const std::vector<double>& a, const std::vector<double>& b) {
    const std::size_t n = a.size();
    if (n != b.size()) throw ConfigError("kendall_taub: length mismatch");
    if (n < 2) return kNaN;
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int p, int q) {
        if (a[p] != a[q]) return a[p] < a[q];
        return b[p] < b[q];
    });
    double t1 = 0.0, t3 = 0.0;
    {
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && a[idx[j + 1]] == a[idx[i]]) ++j;
            const double run = static_cast<double>(j - i + 1);
            t1 += run * (run - 1.0) / 2.0;
            std::size_t k = i;
            while (k <= j) {
                std::size_t m = k;
                while (m + 1 <= j && b[idx[m + 1]] == b[idx[k]]) ++m;
                const double jr = static_cast<double>(m - k + 1);
                t3 += jr * (jr - 1.0) / 2.0;
                k = m + 1;
            }
            i = j + 1;
        }
    }
    std::vector<double> y_in_x_order(n);
    for (std::size_t i = 0; i < n; ++i) y_in_x_order[i] = b[idx[i]];
    const uint64_t dis = count_inversions(y_in_x_order);  // leaves the vector sorted
    const double t2 = tie_term(y_in_x_order);
    const double tot = 0.5 * static_cast<double>(n) * (static_cast<double>(n) - 1.0);
    if (tot <= t1 || tot <= t2) return kNaN;
    const double con_minus_dis = tot - t1 - t2 + t3 - 2.0 * static_cast<double>(dis);
    return con_minus_dis / std::sqrt((tot - t1) * (tot - t2));
}

double kendall_taub_partial(const RDM& t, const RDM& v1, const RDM& v2) {
    check_same_n(t, v1);
    check_same_n(t, v2);
    const auto& x = t.condensed;
    const auto& y = v1.condensed;
    const auto& z = v2.condensed;
    return partial_from_pairwise(kendall_taub(x, y), kendall_taub(x, z), kendall_taub(y, z));
}

namespace {

Mat one_hot_design(const std::vector<TokenSequence>& toks, const std::vector<int>& order,
                   int n_vocab, int position) {
    const int n = static_cast<int>(order.size());
    const int L = static_cast<int>(toks[0].size());
    const int P = position < 0 ? L : 1;
    Mat X = Mat::Zero(n, static_cast<Eigen::Index>(P) * n_vocab);
    for (int i = 0; i < n; ++i) {
        const TokenSequence& s = toks[order[i]];
        if (position < 0) {
            for (int l = 0; l < L; ++l) X(i, l * n_vocab + s[l]) = 1.0;
        } else {
            X(i, s[position]) = 1.0;
        }
    }
    return X;
}

std::vector<double> val_r2(const Mat& pred, const Mat& y_val) {
    std::vector<double> r2(y_val.cols());
    for (int j = 0; j < y_val.cols(); ++j) {
        const double mean = y_val.col(j).mean();
        const double sst = (y_val.col(j).array() - mean).square().sum();
        const double sse = (y_val.col(j) - pred.col(j)).squaredNorm();
        r2[static_cast<std::size_t>(j)] = sst < 1e-18 ? 0.0 : 1.0 - sse / sst;
    }
    return r2;
}

}  // namespace

ProbeResult delta_r2(const std::vector<TokenSequence>& tok_train,
                     const std::vector<TokenSequence>& tok_val, const Mat& vis_train,
                     const Mat& vis_val, int n_vocab, int position, int n_pcs_cap, int n_perms,
                     Rng& rng) {
    const int n_tr = static_cast<int>(vis_train.rows());
    const int n_va = static_cast<int>(vis_val.rows());
    if (static_cast<int>(tok_train.size()) != n_tr || static_cast<int>(tok_val.size()) != n_va)
        throw ConfigError("delta_r2: token/feature count mismatch");
    if (n_tr < 2 || n_va < 2) throw ConfigError("delta_r2: need at least 2 items per split");
    if (position >= static_cast<int>(tok_train[0].size()))
        throw ConfigError("delta_r2: position out of range");

    const Eigen::RowVectorXd mean = vis_train.colwise().mean();
    const Mat centered = vis_train.rowwise() - mean;
    Eigen::BDCSVD<Mat> svd(centered, Eigen::ComputeThinV);
    const Vec& sv = svd.singularValues();
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > 1e-12 * sv(0)) ++rank;
    const int n_pcs = std::max(1, std::min(n_pcs_cap, rank));
    const Mat V = svd.matrixV().leftCols(n_pcs);
    const Mat y_tr = centered * V;
    const Mat y_va = (vis_val.rowwise() - mean) * V;

    Vec ev = sv.head(n_pcs).array().square();
    ev /= ev.sum();

    ProbeResult out;
    out.n_pcs = n_pcs;
    out.n_perms = n_perms;

    std::vector<int> ident(n_tr);
    std::iota(ident.begin(), ident.end(), 0);
    const Mat X_tr = one_hot_design(tok_train, ident, n_vocab, position);
    std::vector<int> ident_va(n_va);
    std::iota(ident_va.begin(), ident_va.end(), 0);
    const Mat X_va = one_hot_design(tok_val, ident_va, n_vocab, position);

    const Mat xtx = X_tr.transpose() * X_tr;
    double eps = 1e-8;
    if (n_tr < X_tr.cols()) {
        eps = 1e-3 * xtx.trace() / static_cast<double>(X_tr.cols());
        out.epsilon_raised = true;
        std::fprintf(stderr,
                     "warning: probe design under-determined (%d rows, %ld columns); "
                     "raising regularization to %g\n",
                     n_tr, static_cast<long>(X_tr.cols()), eps);
    }
    Mat reg = xtx;
    reg.diagonal().array() += eps;
    const Eigen::LDLT<Mat> solver(reg);

    // Row permutations of the design leave X^T X unchanged, so one
    // factorization serves the real fit and every permuted fit.
    const Mat beta = solver.solve(X_tr.transpose() * y_tr);
    out.per_pc_r2 = val_r2(X_va * beta, y_va);

    out.per_pc_r2_perm.assign(static_cast<std::size_t>(n_pcs), 0.0);
    std::vector<int> perm(ident);
    for (int p = 0; p < n_perms; ++p) {
        for (int i = n_tr - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.below(static_cast<uint64_t>(i + 1)));
            std::swap(perm[i], perm[j]);
        }
        const Mat X_perm = one_hot_design(tok_train, perm, n_vocab, position);
        const Mat beta_p = solver.solve(X_perm.transpose() * y_tr);
        const auto r2p = val_r2(X_va * beta_p, y_va);
        for (int j = 0; j < n_pcs; ++j) out.per_pc_r2_perm[j] += r2p[j];
    }
    if (n_perms > 0)
        for (auto& v : out.per_pc_r2_perm) v /= static_cast<double>(n_perms);

    out.delta_r2_vw = 0.0;
    for (int j = 0; j < n_pcs; ++j)
        out.delta_r2_vw += ev(j) * (out.per_pc_r2[j] - out.per_pc_r2_perm[j]);
    return out;
}

RetrievalResult retrieval_top1(const Mat& text_embs, const Mat& img_embs, int K, int seed_begin,
                               int seed_end) {
    const int n = static_cast<int>(text_embs.rows());
    if (img_embs.rows() != n) throw ConfigError("retrieval_top1: row count mismatch");
    if (K < 2 || K > n) throw ConfigError("retrieval_top1: K must be in [2, n]");
    if (seed_end <= seed_begin) throw ConfigError("retrieval_top1: empty candidate seed range");

    Mat tn = text_embs, in = img_embs;
    for (int i = 0; i < n; ++i) {
        const double tnorm = tn.row(i).norm();
        if (tnorm > 0.0) tn.row(i) /= tnorm;
        const double inorm = in.row(i).norm();
        if (inorm > 0.0) in.row(i) /= inorm;
    }
    const Mat S = in * tn.transpose();  // S(i, j) = <image i, text j>

    double i2t_acc = 0.0, t2i_acc = 0.0;
    for (int seed = seed_begin; seed < seed_end; ++seed) {
        Rng rng(mix_seed({0x52455452ULL, static_cast<uint64_t>(seed)}));
        int i2t_hits = 0, t2i_hits = 0;
        for (int i = 0; i < n; ++i) {
            const auto ds = rng.sample_without_replacement(n, K - 1, i);
            bool ok = true;
            for (int d : ds)
                if (S(i, d) >= S(i, i)) {
                    ok = false;
                    break;
                }
            i2t_hits += ok;
        }
        for (int i = 0; i < n; ++i) {
            const auto ds = rng.sample_without_replacement(n, K - 1, i);
            bool ok = true;
            for (int d : ds)
                if (S(d, i) >= S(i, i)) {
                    ok = false;
                    break;
                }
            t2i_hits += ok;
        }
        i2t_acc += static_cast<double>(i2t_hits) / n;
        t2i_acc += static_cast<double>(t2i_hits) / n;
    }
    const double n_seeds = static_cast<double>(seed_end - seed_begin);
    return {i2t_acc / n_seeds, t2i_acc / n_seeds};
}

double positional_entropy(const std::vector<TokenSequence>& seqs, int position) {
    if (seqs.empty()) throw ConfigError("positional_entropy: empty sequence list");
    std::map<int, int> counts;
    for (const auto& s : seqs) {
        if (position < 0 || position >= static_cast<int>(s.size()))
            throw ConfigError("positional_entropy: position out of range");
        ++counts[s[position]];
    }
    const double total = static_cast<double>(seqs.size());
    double h = 0.0;
    for (const auto& [tok, c] : counts) {
        const double p = static_cast<double>(c) / total;
        h -= p * std::log2(p);
    }
    return h;
}

std::vector<SharedSequence> shared_sequences(const std::vector<TokenSequence>& caps_a,
                                             const std::vector<TokenSequence>& caps_b,
                                             int min_support) {
    if (caps_a.size() != caps_b.size()) throw ConfigError("shared_sequences: length mismatch");
    std::map<TokenSequence, std::vector<int>> groups;
    for (std::size_t i = 0; i < caps_a.size(); ++i)
        if (caps_a[i] == caps_b[i]) groups[caps_a[i]].push_back(static_cast<int>(i));
    std::vector<SharedSequence> out;
    for (auto& [seq, rows] : groups) {
        if (static_cast<int>(rows.size()) < min_support) continue;
        SharedSequence s;
        s.seq = seq;
        s.image_rows = rows;
        s.size = static_cast<int>(rows.size());
        out.push_back(std::move(s));
    }
    return out;
}

double mean_cos_radius(const Mat& feats, const std::vector<int>& rows) {
    std::vector<int> all;
    const std::vector<int>* sel = &rows;
    if (rows.empty()) {
        all.resize(static_cast<std::size_t>(feats.rows()));
        std::iota(all.begin(), all.end(), 0);
        sel = &all;
    }
    if (sel->empty()) throw ConfigError("mean_cos_radius: no rows");
    Mat unit(sel->size(), feats.cols());
    for (std::size_t i = 0; i < sel->size(); ++i) {
        unit.row(i) = feats.row((*sel)[i]);
        const double nrm = unit.row(i).norm();
        if (nrm > 0.0) unit.row(i) /= nrm;
    }
    Vec centroid = unit.colwise().mean();
    const double cn = centroid.norm();
    if (cn > 0.0) centroid /= cn;
    double r = 0.0;
    for (int i = 0; i < unit.rows(); ++i) r += 1.0 - unit.row(i).dot(centroid.transpose());
    return r / static_cast<double>(unit.rows());
}

double visual_radius(const SharedSequence& shared, const Mat& feats, double global_radius) {
    if (!(global_radius > 0.0))
        throw DegenerateResult("visual_radius: global radius is zero (all features coincide)");
    return mean_cos_radius(feats, shared.image_rows) / global_radius;
}

BreadthResult category_breadth(const SharedSequence& shared,
                               const std::vector<std::vector<int>>& labels_per_row) {
    std::map<int, double> counts;
    double total = 0.0;
    for (int row : shared.image_rows) {
        if (row < 0 || row >= static_cast<int>(labels_per_row.size()))
            throw ConfigError("category_breadth: row out of range");
        for (int cat : labels_per_row[row]) {
            counts[cat] += 1.0;
            total += 1.0;
        }
    }
    if (total <= 0.0) throw DegenerateResult("category_breadth: no labels in shared set");
    double h = 0.0, top = 0.0;
    for (const auto& [cat, c] : counts) {
        const double p = c / total;
        h -= p * std::log(p);
        top = std::max(top, p);
    }
    return {std::exp(h), top};
}

BootstrapResult matched_size_bootstrap(const std::vector<double>& a, const std::vector<double>& b,
                                       int iters, Rng& rng) {
    if (a.empty() || b.empty()) throw ConfigError("matched_size_bootstrap: empty input");
    if (iters < 1) throw ConfigError("matched_size_bootstrap: iters must be >= 1");
    const int k = static_cast<int>(std::min(a.size(), b.size()));
    auto submean = [&](const std::vector<double>& v) {
        if (static_cast<int>(v.size()) == k)
            return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(k);
        const auto idx = rng.sample_without_replacement(static_cast<int>(v.size()), k,
                                                        static_cast<int>(v.size()));
        double s = 0.0;
        for (int i : idx) s += v[i];
        return s / static_cast<double>(k);
    };
    std::vector<double> diffs(static_cast<std::size_t>(iters));
    BootstrapResult out;
    for (int it = 0; it < iters; ++it) {
        const double ma = submean(a), mb = submean(b);
        out.mean_a += ma;
        out.mean_b += mb;
        diffs[static_cast<std::size_t>(it)] = ma - mb;
    }
    out.mean_a /= iters;
    out.mean_b /= iters;
    out.mean_diff = out.mean_a - out.mean_b;
    std::sort(diffs.begin(), diffs.end());
    auto pct = [&](double q) {
        const double pos = q * static_cast<double>(iters - 1);
        return diffs[static_cast<std::size_t>(std::llround(pos))];
    };
    out.ci_lo = pct(0.025);
    out.ci_hi = pct(0.975);
    return out;
}

int diversity(const std::vector<TokenSequence>& seqs) {
    std::set<TokenSequence> uniq(seqs.begin(), seqs.end());
    return static_cast<int>(uniq.size());
}

double jsd(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw ConfigError("jsd: length mismatch");
    double d = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0.0) d += 0.5 * p[i] * std::log(p[i] / m);
        if (q[i] > 0.0) d += 0.5 * q[i] * std::log(q[i] / m);
    }
    return d;
}

}  // namespace mhcg::metrics

#include "mhcg/synthworld.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mhcg/metrics.hpp"

namespace mhcg {

namespace {

constexpr uint64_t kTagCategories = 0x6361;  // category embedding stream
constexpr uint64_t kTagItem = 0x6974;        // per-item label/noise streams
constexpr uint64_t kTagEncoderA = 0x6541;
constexpr uint64_t kTagEncoderB = 0x6542;
constexpr double kZipfExponent = 1.0;

void validate(const WorldConfig& cfg) {
    if (cfg.n_train < 1 || cfg.n_val < 1) throw ConfigError("world: split sizes must be >= 1");
    if (cfg.latent_dim < 1) throw ConfigError("world: latent_dim must be >= 1");
    if (cfg.n_categories < 1) throw ConfigError("world: n_categories must be >= 1");
    if (cfg.max_labels_per_item < 1 || cfg.max_labels_per_item > cfg.n_categories)
        throw ConfigError("world: max_labels_per_item must be in [1, n_categories]");
    if (cfg.category_scale < 0.0 || cfg.noise_scale < 0.0)
        throw ConfigError("world: scales must be >= 0");
}

std::vector<int> draw_labels(const WorldConfig& cfg, Rng& rng) {
    const int count = 1 + static_cast<int>(rng.below(cfg.max_labels_per_item));
    std::vector<double> weight(cfg.n_categories);
    for (int k = 0; k < cfg.n_categories; ++k)
        weight[k] = 1.0 / std::pow(static_cast<double>(k + 1), kZipfExponent);
    std::vector<int> labels;
    labels.reserve(count);
    for (int c = 0; c < count; ++c) {
        double total = 0.0;
        for (int k = 0; k < cfg.n_categories; ++k) total += weight[k];
        double u = rng.uniform() * total;
        int pick = cfg.n_categories - 1;
        for (int k = 0; k < cfg.n_categories; ++k) {
            if (weight[k] <= 0.0) continue;
            u -= weight[k];
            if (u < 0.0) {
                pick = k;
                break;
            }
        }
        labels.push_back(pick);
        weight[pick] = 0.0;
    }
    return labels;
}

WorldItem make_item(const WorldConfig& cfg, const Mat& cat_embed, int id) {
    Rng rng(mix_seed({cfg.seed, kTagItem, static_cast<uint64_t>(id)}));
    WorldItem item;
    item.id = id;
    item.labels = draw_labels(cfg, rng);
    item.latent = Vec::Zero(cfg.latent_dim);
    for (int c : item.labels) item.latent += cfg.category_scale * cat_embed.row(c).transpose();
    for (int d = 0; d < cfg.latent_dim; ++d) item.latent(d) += cfg.noise_scale * rng.normal();
    return item;
}

// Unit-norm rows confined to a random rank-dim subspace (or unconstrained
// when rank is 0 or covers the full space).
Mat random_unit_rows(int rows, int cols, int rank, Rng& rng) {
    Mat basis;
    if (rank > 0 && rank < cols) {
        Mat g(cols, rank);
        for (int i = 0; i < cols; ++i)
            for (int j = 0; j < rank; ++j) g(i, j) = rng.normal();
        Eigen::HouseholderQR<Mat> qr(g);
        basis = qr.householderQ() * Mat::Identity(cols, rank);
    } else {
        rank = cols;
        basis = Mat::Identity(cols, cols);
    }
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        Vec coef(rank);
        for (int j = 0; j < rank; ++j) coef(j) = rng.normal();
        Vec row = basis * coef;
        const double nrm = row.norm();
        m.row(i) = (nrm > 0.0 ? Vec(row / nrm) : Vec(basis.col(0))).transpose();
    }
    return m;
}

const char* nonlin_name(Nonlinearity n) {
    return n == Nonlinearity::tanh_fn ? "tanh" : "identity";
}

Nonlinearity nonlin_from(const std::string& s) {
    if (s == "tanh") return Nonlinearity::tanh_fn;
    if (s == "identity") return Nonlinearity::identity;
    throw ConfigError("encoder file: unknown nonlinearity '" + s + "'");
}

void write_hex(std::FILE* f, double v) { std::fprintf(f, " %a", v); }

double parse_double(const std::string& tok, const char* what) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0')
        throw ConfigError(std::string("parse error: bad ") + what + " '" + tok + "'");
    return v;
}

}  // namespace

Dataset generate_dataset(const WorldConfig& cfg) {
    validate(cfg);
    Rng cat_rng(mix_seed({cfg.seed, kTagCategories}));
    Mat cat_embed(cfg.n_categories, cfg.latent_dim);
    for (int i = 0; i < cfg.n_categories; ++i)
        for (int j = 0; j < cfg.latent_dim; ++j) cat_embed(i, j) = cat_rng.normal();

    Dataset ds;
    ds.train.reserve(cfg.n_train);
    ds.val.reserve(cfg.n_val);
    for (int i = 0; i < cfg.n_train; ++i) ds.train.push_back(make_item(cfg, cat_embed, i));
    for (int i = 0; i < cfg.n_val; ++i)
        ds.val.push_back(make_item(cfg, cat_embed, cfg.n_train + i));
    return ds;
}

std::pair<SyntheticEncoder, SyntheticEncoder> make_encoder_pair(const EncoderPairSpec& spec,
                                                                int latent_dim) {
    if (spec.mix < 0.0 || spec.mix > 1.0) throw ConfigError("encoder pair: mix must be in [0,1]");
    if (spec.feat_dim_a < 2 || spec.feat_dim_b < 2)
        throw ConfigError("encoder pair: feat dims must be >= 2");
    if (latent_dim < 1) throw ConfigError("encoder pair: latent_dim must be >= 1");
    if (spec.row_rank < 0) throw ConfigError("encoder pair: row_rank must be >= 0");

    Rng rng_a(mix_seed({spec.seed, kTagEncoderA}));
    Rng rng_b(mix_seed({spec.seed, kTagEncoderB}));

    SyntheticEncoder a;
    a.feat_dim = spec.feat_dim_a;
    a.weight = random_unit_rows(spec.feat_dim_a, latent_dim, spec.row_rank, rng_a);
    a.bias = Vec::Zero(spec.feat_dim_a);

    SyntheticEncoder b;
    b.feat_dim = spec.feat_dim_b;
    b.bias = Vec::Zero(spec.feat_dim_b);
    const Mat indep = random_unit_rows(spec.feat_dim_b, latent_dim, spec.row_rank, rng_b);
    b.weight = Mat::Zero(spec.feat_dim_b, latent_dim);
    for (int r = 0; r < spec.feat_dim_b; ++r) {
        if (spec.mix == 1.0 && r < spec.feat_dim_a) {
            b.weight.row(r) = a.weight.row(r);  // exact copy, no renormalization drift
            continue;
        }
        Vec row = (1.0 - spec.mix) * indep.row(r).transpose();
        if (r < spec.feat_dim_a) row += spec.mix * a.weight.row(r).transpose();
        const double nrm = row.norm();
        if (nrm > 0.0) {
            b.weight.row(r) = row.transpose() / nrm;
        } else {
            b.weight.row(r) = indep.row(r);
        }
    }
    return {std::move(a), std::move(b)};
}

Vec encode_view(const SyntheticEncoder& enc, const WorldItem& item, double aug_scale, Rng& rng) {
    if (enc.weight.cols() != item.latent.size())
        throw ConfigError("encode_view: latent dimension mismatch");
    if (aug_scale < 0.0) throw ConfigError("encode_view: aug_scale must be >= 0");
    Vec x = item.latent;
    if (aug_scale > 0.0)
        for (int d = 0; d < x.size(); ++d) x(d) += aug_scale * rng.normal();
    Vec pre = enc.weight * x + enc.bias;
    if (enc.nonlinearity == Nonlinearity::tanh_fn)
        for (int d = 0; d < pre.size(); ++d) pre(d) = std::tanh(pre(d));
    return pre;
}

Mat encode_deterministic(const std::vector<WorldItem>& items, const SyntheticEncoder& enc) {
    Rng unused(0);
    Mat feats(items.size(), enc.feat_dim);
    for (std::size_t i = 0; i < items.size(); ++i)
        feats.row(i) = encode_view(enc, items[i], 0.0, unused).transpose();
    return feats;
}

double measured_vision_rsa(const std::vector<WorldItem>& items, const SyntheticEncoder& enc_a,
                           const SyntheticEncoder& enc_b) {
    const auto rdm_a = metrics::vision_rdm(encode_deterministic(items, enc_a));
    const auto rdm_b = metrics::vision_rdm(encode_deterministic(items, enc_b));
    return metrics::spearman(rdm_a, rdm_b);
}

CalibrationResult calibrate_mix(const std::vector<WorldItem>& items, EncoderPairSpec spec,
                                int latent_dim, double target_rsa, double tol, int max_iter) {
    auto rsa_at = [&](double mix) {
        spec.mix = mix;
        const auto [a, b] = make_encoder_pair(spec, latent_dim);
        return measured_vision_rsa(items, a, b);
    };
    CalibrationResult res;
    double lo = 0.0, hi = 1.0;
    const double rsa_lo = rsa_at(lo), rsa_hi = rsa_at(hi);
    if (target_rsa >= rsa_hi) return {1.0, rsa_hi, 0};
    if (target_rsa <= rsa_lo) return {0.0, rsa_lo, 0};
    for (int it = 0; it < max_iter; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double r = rsa_at(mid);
        res = {mid, r, it + 1};
        if (std::abs(r - target_rsa) <= tol) return res;
        (r < target_rsa ? lo : hi) = mid;
    }
    return res;
}

void save_dataset(const std::string& path, const Dataset& ds) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw ConfigError("cannot open for writing: " + path);
    const int latent_dim =
        ds.train.empty() ? (ds.val.empty() ? 0 : static_cast<int>(ds.val[0].latent.size()))
                         : static_cast<int>(ds.train[0].latent.size());
    std::fprintf(f, "mhcg-dataset v1\n");
    std::fprintf(f, "latent_dim %d\n", latent_dim);
    std::fprintf(f, "n_train %zu\n", ds.train.size());
    std::fprintf(f, "n_val %zu\n", ds.val.size());
    auto write_items = [&](const std::vector<WorldItem>& items) {
        for (const auto& it : items) {
            std::fprintf(f, "%d", it.id);
            for (int d = 0; d < it.latent.size(); ++d) write_hex(f, it.latent(d));
            std::fprintf(f, " |");
            for (int c : it.labels) std::fprintf(f, " %d", c);
            std::fprintf(f, "\n");
        }
    };
    write_items(ds.train);
    write_items(ds.val);
    std::fclose(f);
}

Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open: " + path);
    std::string line;
    std::getline(in, line);
    if (line != "mhcg-dataset v1") throw ConfigError("dataset file: bad header in " + path);
    auto read_kv = [&](const char* key) {
        std::string k;
        long v = 0;
        in >> k >> v;
        if (k != key) throw ConfigError(std::string("dataset file: expected ") + key);
        return v;
    };
    const int latent_dim = static_cast<int>(read_kv("latent_dim"));
    const long n_train = read_kv("n_train");
    const long n_val = read_kv("n_val");
    std::getline(in, line);  // finish the n_val line
    Dataset ds;
    auto read_items = [&](std::vector<WorldItem>& items, long n) {
        items.reserve(static_cast<std::size_t>(n));
        for (long i = 0; i < n; ++i) {
            if (!std::getline(in, line)) throw ConfigError("dataset file: truncated " + path);
            std::istringstream ss(line);
            WorldItem item;
            ss >> item.id;
            item.latent = Vec(latent_dim);
            std::string tok;
            for (int d = 0; d < latent_dim; ++d) {
                ss >> tok;
                item.latent(d) = parse_double(tok, "latent value");
            }
            ss >> tok;
            if (tok != "|") throw ConfigError("dataset file: missing label separator");
            int c;
            while (ss >> c) item.labels.push_back(c);
            if (item.labels.empty()) throw ConfigError("dataset file: item without labels");
            items.push_back(std::move(item));
        }
    };
    read_items(ds.train, n_train);
    read_items(ds.val, n_val);
    return ds;
}

void save_encoder(const std::string& path, const SyntheticEncoder& enc) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw ConfigError("cannot open for writing: " + path);
    std::fprintf(f, "mhcg-encoder v1\n");
    std::fprintf(f, "feat_dim %d\n", enc.feat_dim);
    std::fprintf(f, "latent_dim %d\n", static_cast<int>(enc.weight.cols()));
    std::fprintf(f, "nonlinearity %s\n", nonlin_name(enc.nonlinearity));
    for (int i = 0; i < enc.weight.rows(); ++i) {
        std::fprintf(f, "w");
        for (int j = 0; j < enc.weight.cols(); ++j) write_hex(f, enc.weight(i, j));
        std::fprintf(f, "\n");
    }
    std::fprintf(f, "b");
    for (int i = 0; i < enc.bias.size(); ++i) write_hex(f, enc.bias(i));
    std::fprintf(f, "\n");
    std::fclose(f);
}

SyntheticEncoder load_encoder(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open: " + path);
    std::string line;
    std::getline(in, line);
    if (line != "mhcg-encoder v1") throw ConfigError("encoder file: bad header in " + path);
    std::string key, nl;
    int feat_dim = 0, latent_dim = 0;
    in >> key >> feat_dim;
    if (key != "feat_dim") throw ConfigError("encoder file: expected feat_dim");
    in >> key >> latent_dim;
    if (key != "latent_dim") throw ConfigError("encoder file: expected latent_dim");
    in >> key >> nl;
    if (key != "nonlinearity") throw ConfigError("encoder file: expected nonlinearity");
    SyntheticEncoder enc;
    enc.feat_dim = feat_dim;
    enc.nonlinearity = nonlin_from(nl);
    enc.weight = Mat(feat_dim, latent_dim);
    enc.bias = Vec(feat_dim);
    std::string tok;
    for (int i = 0; i < feat_dim; ++i) {
        in >> tok;
        if (tok != "w") throw ConfigError("encoder file: expected weight row");
        for (int j = 0; j < latent_dim; ++j) {
            in >> tok;
            enc.weight(i, j) = parse_double(tok, "weight");
        }
    }
    in >> tok;
    if (tok != "b") throw ConfigError("encoder file: expected bias row");
    for (int i = 0; i < feat_dim; ++i) {
        in >> tok;
        enc.bias(i) = parse_double(tok, "bias");
    }
    return enc;
}

}  // namespace mhcg

// Experiment orchestration: config parsing and rendering, the seed sweep
// with checkpoints and versioned reports, the frozen-agent evaluation
// battery, condition comparison tables, and the CLI dispatch.
#include "mhcg/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mhcg/diagnostics.hpp"
#include "mhcg/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mhcg::runner {

namespace {

constexpr uint64_t kTagInitA = 0x6961;
constexpr uint64_t kTagInitB = 0x6962;
constexpr uint64_t kTagEpoch = 0x6570;
constexpr uint64_t kTagProbe = 0x7072;

const double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_file(const std::string& path, const std::string& text) {
    fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cannot write file: " + path);
    f << text;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot read file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// ---- config text ----

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

using Sections = std::map<std::string, std::map<std::string, std::string>>;

Sections parse_sections(const std::string& text) {
    Sections out;
    std::istringstream in(text);
    std::string line, section;
    int ln = 0;
    while (std::getline(in, line)) {
        ++ln;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("config line " + std::to_string(ln) +
                                                   ": unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) throw ConfigError("config line " + std::to_string(ln) +
                                                   ": empty section name");
            out[section];
            continue;
        }
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(ln) + ": expected key = value");
        std::string key = trim(t.substr(0, eq));
        std::string val = trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(ln) + ": empty key");
        if (section.empty())
            throw ConfigError("config line " + std::to_string(ln) + ": key outside any section");
        out[section][key] = val;
    }
    return out;
}

// Tracks consumption so leftovers can be reported as unknown keys.
struct ConfigReader {
    Sections sections;

    bool has(const std::string& sec, const std::string& key) const {
        auto s = sections.find(sec);
        return s != sections.end() && s->second.count(key) > 0;
    }
    std::string take(const std::string& sec, const std::string& key) {
        auto s = sections.find(sec);
        if (s == sections.end() || !s->second.count(key))
            throw ConfigError("missing config key: [" + sec + "] " + key);
        std::string v = s->second.at(key);
        s->second.erase(key);
        return v;
    }
    std::string take_or(const std::string& sec, const std::string& key, const std::string& dflt) {
        return has(sec, key) ? take(sec, key) : dflt;
    }
    void finish() const {
        for (const auto& [sec, kv] : sections)
            for (const auto& [key, val] : kv)
                throw ConfigError("unknown config key: [" + sec + "] " + key);
    }
};

long long to_ll(const std::string& sec, const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        long long r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key [" + sec + "] " + key + ": not an integer: " + v);
    }
}

uint64_t to_u64(const std::string& sec, const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        unsigned long long r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key [" + sec + "] " + key + ": not an unsigned integer: " + v);
    }
}

double to_f64(const std::string& sec, const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key [" + sec + "] " + key + ": not a number: " + v);
    }
}

struct IntReader {
    ConfigReader& r;
    std::string sec;
    void operator()(const std::string& key, int& field) const {
        if (r.has(sec, key)) field = static_cast<int>(to_ll(sec, key, r.take(sec, key)));
    }
};

struct F64Reader {
    ConfigReader& r;
    std::string sec;
    void operator()(const std::string& key, double& field) const {
        if (r.has(sec, key)) field = to_f64(sec, key, r.take(sec, key));
    }
};

const char* psi_name(PsiMode m) { return m == PsiMode::first_token ? "first_token" : "mean_pool"; }

PsiMode psi_from(const std::string& v) {
    if (v == "first_token") return PsiMode::first_token;
    if (v == "mean_pool") return PsiMode::mean_pool;
    throw ConfigError("config key [agent] psi: unknown value: " + v);
}

const char* rule_name(RuleKind k) {
    switch (k) {
        case RuleKind::mhcg: return "mhcg";
        case RuleKind::no_com: return "no_com";
        case RuleKind::all_accept: return "all_accept";
        case RuleKind::random_rate_matched: return "random_rate_matched";
        case RuleKind::itm_based: return "itm_based";
    }
    return "mhcg";
}

RuleKind rule_from(const std::string& v) {
    if (v == "mhcg") return RuleKind::mhcg;
    if (v == "no_com") return RuleKind::no_com;
    if (v == "all_accept") return RuleKind::all_accept;
    if (v == "random_rate_matched") return RuleKind::random_rate_matched;
    if (v == "itm_based") return RuleKind::itm_based;
    throw ConfigError("config key [rule] kind: unknown value: " + v);
}

const char* itm_mode_name(ItmMode m) {
    return m == ItmMode::compare_current ? "compare_current" : "sigmoid_draw";
}

ItmMode itm_mode_from(const std::string& v) {
    if (v == "compare_current") return ItmMode::compare_current;
    if (v == "sigmoid_draw") return ItmMode::sigmoid_draw;
    throw ConfigError("config key [rule] itm_mode: unknown value: " + v);
}

const char* optim_name(OptimKind k) { return k == OptimKind::sgd ? "sgd" : "adam"; }

OptimKind optim_from(const std::string& v) {
    if (v == "sgd") return OptimKind::sgd;
    if (v == "adam") return OptimKind::adam;
    throw ConfigError("config key [train] optimizer: unknown value: " + v);
}

std::vector<uint64_t> seeds_from(const std::string& v) {
    std::vector<uint64_t> out;
    std::string item;
    std::istringstream in(v);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError("config key [run] seeds: empty entry");
        out.push_back(to_u64("run", "seeds", item));
    }
    if (out.empty()) throw ConfigError("config key [run] seeds: empty list");
    return out;
}

// ---- report assembly ----

std::string epoch_key(int epoch) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", epoch);
    return buf;
}

json seed_json(const SeedResult& r) {
    json metrics = json::object();
    for (const auto& [epoch, rows] : r.metrics) {
        json e = json::object();
        for (const auto& [key, value] : rows) e[key] = value;
        metrics[epoch_key(epoch)] = e;
    }
    json failure = nullptr;
    if (r.aborted) failure = {{"epoch", r.failure_epoch}, {"message", r.failure}};
    return {{"seed", r.seed},
            {"status", r.aborted ? "aborted" : "complete"},
            {"failure", failure},
            {"degenerate_final", r.degenerate_final},
            {"eval_epochs", r.eval_epochs},
            {"metrics", metrics}};
}

const char* kMetricsCsvHeader =
    "# schema: mhcg.metrics_csv.v1\ncondition,method,seed,epoch,direction,metric,value\n";

void append_csv_rows(std::string& out, const ExperimentConfig& cfg, uint64_t seed, int epoch,
                     const std::vector<MetricRow>& rows) {
    for (const MetricRow& r : rows) {
        out += cfg.condition;
        out += ',';
        out += cfg.method;
        out += ',';
        out += std::to_string(seed);
        out += ',';
        out += std::to_string(epoch);
        out += ',';
        out += r.direction;
        out += ',';
        out += r.metric;
        out += ',';
        out += g17(r.value);
        out += '\n';
    }
}

json epoch_loss_json(const EpochLoss& e) {
    return {{"lm", e.lm}, {"itc", e.itc}, {"itm", e.itm}, {"grad_norm", e.grad_norm}};
}

json trace_json(const TrainTrace& t) {
    json j = json::object();
    if (!t.vlm.empty()) j["vlm"] = epoch_loss_json(t.vlm.back());
    if (!t.dens.empty())
        j["dens"] = {{"probvlm", t.dens.back().probvlm}, {"grad_norm", t.dens.back().grad_norm}};
    return j;
}

double rate(const DirectionLog& d) {
    return d.n_items > 0 ? static_cast<double>(d.n_accepted) / d.n_items : kNaN;
}

std::vector<TokenSequence> greedy_captions(const AgentConfig& cfg, const AgentParams& p,
                                           const Mat& feats) {
    std::vector<TokenSequence> out;
    out.reserve(static_cast<size_t>(feats.rows()));
    for (Eigen::Index i = 0; i < feats.rows(); ++i)
        out.push_back(decode_greedy(cfg, p, feats.row(i).transpose()));
    return out;
}

Mat text_embeddings(const AgentConfig& cfg, const AgentParams& p,
                    const std::vector<TokenSequence>& seqs) {
    Mat out(static_cast<Eigen::Index>(seqs.size()), cfg.d_s);
    for (size_t i = 0; i < seqs.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = text_encode(cfg, p, seqs[i]).transpose();
    return out;
}

Mat vis_embeddings(const AgentConfig& cfg, const AgentParams& p, const Mat& feats) {
    Mat out(feats.rows(), cfg.d_s);
    for (Eigen::Index i = 0; i < feats.rows(); ++i)
        out.row(i) = vis_project(cfg, p, feats.row(i).transpose()).transpose();
    return out;
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
    if (cfg.condition.empty()) throw ConfigError("condition must be non-empty");
    if (cfg.method.empty()) throw ConfigError("method must be non-empty");
    if (cfg.n_epochs < 1) throw ConfigError("n_epochs must be >= 1");
    if (cfg.eval_every < 1 || cfg.eval_every > cfg.n_epochs)
        throw ConfigError("eval_every must lie in [1, n_epochs]");
    if (cfg.seeds.empty()) throw ConfigError("seeds must be non-empty");
    std::set<uint64_t> uniq(cfg.seeds.begin(), cfg.seeds.end());
    if (uniq.size() != cfg.seeds.size()) throw ConfigError("seeds must be distinct");
    if (cfg.output_dir.empty()) throw ConfigError("output_dir must be non-empty");
    if (cfg.eval.retrieval_k < 2) throw ConfigError("retrieval_k must be >= 2");
    if (cfg.eval.retrieval_seed_end <= cfg.eval.retrieval_seed_begin)
        throw ConfigError("retrieval seed range must be non-empty");
    if (cfg.eval.probe_pcs < 1) throw ConfigError("probe_pcs must be >= 1");
    if (cfg.eval.probe_perms < 1) throw ConfigError("probe_perms must be >= 1");
    if (cfg.eval.shared_min_support < 1) throw ConfigError("shared_min_support must be >= 1");
    if (cfg.game.temperature <= 0) throw ConfigError("temperature must be > 0");
    if (cfg.temperature_end == 0 || cfg.temperature_end > cfg.game.temperature)
        throw ConfigError("temperature_end must be in (0, temperature] or negative to disable");
    mhcg::validate(agent_a_config(cfg));
    mhcg::validate(agent_b_config(cfg));
}

double epoch_temperature(const ExperimentConfig& cfg, int epoch) {
    if (cfg.temperature_end < 0 || cfg.n_epochs <= 1) return cfg.game.temperature;
    const double f = static_cast<double>(epoch - 1) / (cfg.n_epochs - 1);
    const double w = 0.5 * (1.0 + std::cos(M_PI * f));
    return cfg.temperature_end + (cfg.game.temperature - cfg.temperature_end) * w;
}

AgentConfig agent_a_config(const ExperimentConfig& cfg) {
    AgentConfig c = cfg.agent;
    c.feat_dim = cfg.encoders.feat_dim_a;
    return c;
}

AgentConfig agent_b_config(const ExperimentConfig& cfg) {
    AgentConfig c = cfg.agent;
    c.feat_dim = cfg.encoders.feat_dim_b;
    return c;
}

ExperimentConfig parse_config(const std::string& text) {
    ConfigReader r{parse_sections(text)};
    ExperimentConfig cfg;

    std::string schema = r.take_or("meta", "schema", "mhcg.config.v1");
    if (schema != "mhcg.config.v1")
        throw ConfigError("config key [meta] schema: unsupported value: " + schema);
    cfg.condition = r.take("meta", "condition");
    cfg.method = r.take("meta", "method");

    IntReader wi{r, "world"};
    F64Reader wf{r, "world"};
    wi("n_train", cfg.world.n_train);
    wi("n_val", cfg.world.n_val);
    wi("latent_dim", cfg.world.latent_dim);
    wi("n_categories", cfg.world.n_categories);
    wi("max_labels_per_item", cfg.world.max_labels_per_item);
    wf("category_scale", cfg.world.category_scale);
    wf("noise_scale", cfg.world.noise_scale);
    if (r.has("world", "seed")) cfg.world.seed = to_u64("world", "seed", r.take("world", "seed"));

    IntReader ei{r, "encoders"};
    F64Reader ef{r, "encoders"};
    ef("mix", cfg.encoders.mix);
    ei("feat_dim_a", cfg.encoders.feat_dim_a);
    ei("feat_dim_b", cfg.encoders.feat_dim_b);
    ei("row_rank", cfg.encoders.row_rank);
    if (r.has("encoders", "seed"))
        cfg.encoders.seed = to_u64("encoders", "seed", r.take("encoders", "seed"));

    IntReader ai{r, "agent"};
    F64Reader af{r, "agent"};
    ai("n_vocab", cfg.agent.n_vocab);
    ai("seq_len", cfg.agent.seq_len);
    ai("d_t", cfg.agent.d_t);
    ai("d_s", cfg.agent.d_s);
    ai("d_h", cfg.agent.d_h);
    af("eps_scale", cfg.agent.eps_scale);
    if (r.has("agent", "psi")) cfg.agent.psi = psi_from(r.take("agent", "psi"));

    cfg.rule.kind = rule_from(r.take("rule", "kind"));
    F64Reader rf{r, "rule"};
    rf("target_rate", cfg.rule.target_rate);
    if (r.has("rule", "itm_mode")) cfg.rule.itm_mode = itm_mode_from(r.take("rule", "itm_mode"));

    IntReader ti{r, "train"};
    F64Reader tf{r, "train"};
    tf("lr_vlm", cfg.hyper.lr_vlm);
    tf("lr_dens", cfg.hyper.lr_dens);
    ti("n_vlm_epochs", cfg.hyper.n_vlm_epochs);
    ti("n_dens_epochs", cfg.hyper.n_dens_epochs);
    ti("batch_size", cfg.hyper.batch_size);
    ti("n_neg_itm", cfg.hyper.n_neg_itm);
    tf("weight_itc", cfg.hyper.weight_itc);
    tf("weight_itm", cfg.hyper.weight_itm);
    tf("weight_lm", cfg.hyper.weight_lm);
    tf("adam_beta1", cfg.hyper.adam_beta1);
    tf("adam_beta2", cfg.hyper.adam_beta2);
    tf("adam_eps", cfg.hyper.adam_eps);
    if (r.has("train", "optimizer")) cfg.hyper.optimizer = optim_from(r.take("train", "optimizer"));

    IntReader gi{r, "game"};
    F64Reader gf{r, "game"};
    gf("temperature", cfg.game.temperature);
    gf("temperature_end", cfg.temperature_end);
    gi("top_k", cfg.game.top_k);
    gf("aug_scale", cfg.game.aug_scale);

    IntReader vi{r, "eval"};
    vi("retrieval_k", cfg.eval.retrieval_k);
    vi("retrieval_seed_begin", cfg.eval.retrieval_seed_begin);
    vi("retrieval_seed_end", cfg.eval.retrieval_seed_end);
    vi("probe_pcs", cfg.eval.probe_pcs);
    vi("probe_perms", cfg.eval.probe_perms);
    vi("shared_min_support", cfg.eval.shared_min_support);

    cfg.n_epochs = static_cast<int>(to_ll("run", "n_epochs", r.take("run", "n_epochs")));
    cfg.eval_every = static_cast<int>(to_ll("run", "eval_every", r.take("run", "eval_every")));
    cfg.seeds = seeds_from(r.take("run", "seeds"));
    cfg.output_dir = r.take("run", "output_dir");

    r.finish();
    validate(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_file(path)); }

std::string config_text(const ExperimentConfig& cfg) {
    std::ostringstream o;
    o << "[meta]\n";
    o << "schema = mhcg.config.v1\n";
    o << "condition = " << cfg.condition << "\n";
    o << "method = " << cfg.method << "\n";
    o << "\n[world]\n";
    o << "n_train = " << cfg.world.n_train << "\n";
    o << "n_val = " << cfg.world.n_val << "\n";
    o << "latent_dim = " << cfg.world.latent_dim << "\n";
    o << "n_categories = " << cfg.world.n_categories << "\n";
    o << "max_labels_per_item = " << cfg.world.max_labels_per_item << "\n";
    o << "category_scale = " << g17(cfg.world.category_scale) << "\n";
    o << "noise_scale = " << g17(cfg.world.noise_scale) << "\n";
    o << "seed = " << cfg.world.seed << "\n";
    o << "\n[encoders]\n";
    o << "mix = " << g17(cfg.encoders.mix) << "\n";
    o << "feat_dim_a = " << cfg.encoders.feat_dim_a << "\n";
    o << "feat_dim_b = " << cfg.encoders.feat_dim_b << "\n";
    o << "row_rank = " << cfg.encoders.row_rank << "\n";
    o << "seed = " << cfg.encoders.seed << "\n";
    o << "\n[agent]\n";
    o << "n_vocab = " << cfg.agent.n_vocab << "\n";
    o << "seq_len = " << cfg.agent.seq_len << "\n";
    o << "d_t = " << cfg.agent.d_t << "\n";
    o << "d_s = " << cfg.agent.d_s << "\n";
    o << "d_h = " << cfg.agent.d_h << "\n";
    o << "psi = " << psi_name(cfg.agent.psi) << "\n";
    o << "eps_scale = " << g17(cfg.agent.eps_scale) << "\n";
    o << "\n[rule]\n";
    o << "kind = " << rule_name(cfg.rule.kind) << "\n";
    o << "target_rate = " << g17(cfg.rule.target_rate) << "\n";
    o << "itm_mode = " << itm_mode_name(cfg.rule.itm_mode) << "\n";
    o << "\n[train]\n";
    o << "lr_vlm = " << g17(cfg.hyper.lr_vlm) << "\n";
    o << "lr_dens = " << g17(cfg.hyper.lr_dens) << "\n";
    o << "n_vlm_epochs = " << cfg.hyper.n_vlm_epochs << "\n";
    o << "n_dens_epochs = " << cfg.hyper.n_dens_epochs << "\n";
    o << "batch_size = " << cfg.hyper.batch_size << "\n";
    o << "n_neg_itm = " << cfg.hyper.n_neg_itm << "\n";
    o << "weight_itc = " << g17(cfg.hyper.weight_itc) << "\n";
    o << "weight_itm = " << g17(cfg.hyper.weight_itm) << "\n";
    o << "weight_lm = " << g17(cfg.hyper.weight_lm) << "\n";
    o << "optimizer = " << optim_name(cfg.hyper.optimizer) << "\n";
    o << "adam_beta1 = " << g17(cfg.hyper.adam_beta1) << "\n";
    o << "adam_beta2 = " << g17(cfg.hyper.adam_beta2) << "\n";
    o << "adam_eps = " << g17(cfg.hyper.adam_eps) << "\n";
    o << "\n[game]\n";
    o << "temperature = " << g17(cfg.game.temperature) << "\n";
    o << "temperature_end = " << g17(cfg.temperature_end) << "\n";
    o << "top_k = " << cfg.game.top_k << "\n";
    o << "aug_scale = " << g17(cfg.game.aug_scale) << "\n";
    o << "\n[eval]\n";
    o << "retrieval_k = " << cfg.eval.retrieval_k << "\n";
    o << "retrieval_seed_begin = " << cfg.eval.retrieval_seed_begin << "\n";
    o << "retrieval_seed_end = " << cfg.eval.retrieval_seed_end << "\n";
    o << "probe_pcs = " << cfg.eval.probe_pcs << "\n";
    o << "probe_perms = " << cfg.eval.probe_perms << "\n";
    o << "shared_min_support = " << cfg.eval.shared_min_support << "\n";
    o << "\n[run]\n";
    o << "n_epochs = " << cfg.n_epochs << "\n";
    o << "eval_every = " << cfg.eval_every << "\n";
    o << "seeds = ";
    for (size_t i = 0; i < cfg.seeds.size(); ++i) o << (i ? "," : "") << cfg.seeds[i];
    o << "\n";
    o << "output_dir = " << cfg.output_dir << "\n";
    return o.str();
}

Mat eval_feature_matrix(const Dataset& ds, const SyntheticEncoder& enc,
                        const std::vector<int>& ids) {
    std::map<int, const WorldItem*> val_by_id;
    for (const WorldItem& it : ds.val) val_by_id[it.id] = &it;
    std::vector<WorldItem> items;
    items.reserve(ids.size());
    for (int id : ids) {
        auto hit = val_by_id.find(id);
        if (hit == val_by_id.end())
            throw ConfigError("evaluation requested non-validation item id " +
                              std::to_string(id));
        items.push_back(*hit->second);
    }
    return encode_deterministic(items, enc);
}

std::vector<MetricRow> evaluate_agents(const AgentConfig& cfg_a, const AgentParams& a,
                                       const AgentConfig& cfg_b, const AgentParams& b,
                                       const SyntheticEncoder& enc_a, const SyntheticEncoder& enc_b,
                                       const Dataset& ds, const EvalOpts& opts, uint64_t seed,
                                       int epoch) {
    if (cfg_a.n_vocab != cfg_b.n_vocab || cfg_a.seq_len != cfg_b.seq_len)
        throw ConfigError("evaluation requires agents with a shared token space");
    if (ds.val.empty()) throw ConfigError("evaluation requires a non-empty validation split");

    std::vector<int> ids;
    ids.reserve(ds.val.size());
    for (const WorldItem& it : ds.val) ids.push_back(it.id);
    const Mat fa = eval_feature_matrix(ds, enc_a, ids);
    const Mat fb = eval_feature_matrix(ds, enc_b, ids);
    const int n = static_cast<int>(ids.size());

    const std::vector<TokenSequence> caps_a = greedy_captions(cfg_a, a, fa);
    const std::vector<TokenSequence> caps_b = greedy_captions(cfg_b, b, fb);

    const metrics::RDM ta = metrics::text_rdm(caps_a);
    const metrics::RDM tb = metrics::text_rdm(caps_b);
    const metrics::RDM va = metrics::vision_rdm(fa);
    const metrics::RDM vb = metrics::vision_rdm(fb);

    std::vector<MetricRow> rows;
    rows.push_back({"rsa_tt", "AB", metrics::spearman(ta, tb)});
    rows.push_back({"rsa_vv", "AB", metrics::spearman(va, vb)});

    const struct {
        const char* dir;
        const metrics::RDM* t;
        const metrics::RDM* v;
        const std::vector<TokenSequence>* caps;
        const AgentConfig* cfg;
        const AgentParams* params;
        const Mat* feats;
    } dirs[4] = {{"AA", &ta, &va, &caps_a, &cfg_a, &a, &fa},
                 {"AB", &ta, &vb, &caps_a, &cfg_b, &b, &fb},
                 {"BA", &tb, &va, &caps_b, &cfg_a, &a, &fa},
                 {"BB", &tb, &vb, &caps_b, &cfg_b, &b, &fb}};

    for (const auto& d : dirs) rows.push_back({"rsa_tv", d.dir, metrics::spearman(*d.t, *d.v)});

    // Probes keep evaluation inside the validation split: the first half of
    // the items fits the PCA and the probe weights, the second half scores.
    const int n_fit = (n + 1) / 2;
    for (int k = 0; k < 4; ++k) {
        const auto& d = dirs[k];
        std::vector<TokenSequence> tok_fit(d.caps->begin(), d.caps->begin() + n_fit);
        std::vector<TokenSequence> tok_score(d.caps->begin() + n_fit, d.caps->end());
        Mat vis_fit = d.feats->topRows(n_fit);
        Mat vis_score = d.feats->bottomRows(n - n_fit);
        Rng rng(mix_seed({seed, kTagProbe, static_cast<uint64_t>(epoch),
                          static_cast<uint64_t>(k)}));
        metrics::ProbeResult pr =
            metrics::delta_r2(tok_fit, tok_score, vis_fit, vis_score, cfg_a.n_vocab, -1,
                              opts.probe_pcs, opts.probe_perms, rng);
        rows.push_back({"delta_r2", d.dir, pr.delta_r2_vw});
    }

    for (const auto& d : dirs) {
        Mat text_embs = text_embeddings(*d.cfg, *d.params, *d.caps);
        Mat img_embs = vis_embeddings(*d.cfg, *d.params, *d.feats);
        metrics::RetrievalResult rr =
            metrics::retrieval_top1(text_embs, img_embs, opts.retrieval_k,
                                    opts.retrieval_seed_begin, opts.retrieval_seed_end);
        rows.push_back({"retrieval_i2t", d.dir, rr.i2t});
        rows.push_back({"retrieval_t2i", d.dir, rr.t2i});
    }

    const int uniq_a = metrics::diversity(caps_a);
    const int uniq_b = metrics::diversity(caps_b);
    rows.push_back({"unique_sequences", "A", static_cast<double>(uniq_a)});
    rows.push_back({"unique_sequences", "B", static_cast<double>(uniq_b)});

    for (int l = 0; l < cfg_a.seq_len; ++l)
        rows.push_back({"entropy_pos" + std::to_string(l), "A",
                        metrics::positional_entropy(caps_a, l)});
    for (int l = 0; l < cfg_b.seq_len; ++l)
        rows.push_back({"entropy_pos" + std::to_string(l), "B",
                        metrics::positional_entropy(caps_b, l)});

    // Undefined under identical encoders, reported as NaN there.
    double delta_a = kNaN, delta_b = kNaN;
    try {
        delta_a = metrics::bias_delta(ta, va, vb);
    } catch (const DegenerateResult&) {
    }
    try {
        delta_b = metrics::bias_delta(tb, vb, va);
    } catch (const DegenerateResult&) {
    }
    rows.push_back({"bias_delta", "A", delta_a});
    rows.push_back({"bias_delta", "B", delta_b});

    const std::vector<metrics::SharedSequence> shared =
        metrics::shared_sequences(caps_a, caps_b, opts.shared_min_support);
    int covered = 0;
    for (const auto& s : shared) covered += s.size;
    rows.push_back({"shared_seq_count", "AB", static_cast<double>(shared.size())});
    rows.push_back({"shared_seq_coverage", "AB", static_cast<double>(covered) / n});
    double radius_a = kNaN, radius_b = kNaN, eff_cat = kNaN, top_mass = kNaN;
    if (!shared.empty()) {
        const double global_a = metrics::mean_cos_radius(fa, {});
        const double global_b = metrics::mean_cos_radius(fb, {});
        std::vector<std::vector<int>> labels;
        labels.reserve(ds.val.size());
        for (const WorldItem& it : ds.val) labels.push_back(it.labels);
        radius_a = radius_b = eff_cat = top_mass = 0.0;
        for (const auto& s : shared) {
            radius_a += metrics::visual_radius(s, fa, global_a);
            radius_b += metrics::visual_radius(s, fb, global_b);
            metrics::BreadthResult br = metrics::category_breadth(s, labels);
            eff_cat += br.effective_categories;
            top_mass += br.top_object_mass;
        }
        const double m = static_cast<double>(shared.size());
        radius_a /= m;
        radius_b /= m;
        eff_cat /= m;
        top_mass /= m;
    }
    rows.push_back({"shared_radius", "A", radius_a});
    rows.push_back({"shared_radius", "B", radius_b});
    rows.push_back({"shared_eff_categories", "AB", eff_cat});
    rows.push_back({"shared_top_mass", "AB", top_mass});

    rows.push_back({"degenerate", "AB", (uniq_a == 1 || uniq_b == 1) ? 1.0 : 0.0});
    return rows;
}

std::string seed_dir(const ExperimentConfig& cfg, uint64_t seed) {
    return cfg.output_dir + "/seed_" + std::to_string(seed);
}

std::string checkpoint_path(const std::string& seed_dir, int epoch, char agent) {
    return seed_dir + "/checkpoints/epoch_" + std::to_string(epoch) + "_" + agent + ".ckpt";
}

std::vector<int> checkpoint_epochs(const std::string& seed_dir) {
    std::vector<int> out;
    const fs::path dir = fs::path(seed_dir) / "checkpoints";
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("epoch_", 0) != 0) continue;
        const std::string suffix = "_a.ckpt";
        if (name.size() <= 6 + suffix.size()) continue;
        if (name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) continue;
        const std::string num = name.substr(6, name.size() - 6 - suffix.size());
        if (num.empty() || num.find_first_not_of("0123456789") != std::string::npos) continue;
        const int epoch = std::stoi(num);
        if (fs::exists(fs::path(seed_dir) / "checkpoints" /
                       ("epoch_" + num + "_b.ckpt")))
            out.push_back(epoch);
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

struct SeedRunFiles {
    std::string dir;
    std::ofstream ndjson;
    std::ofstream csv;
};

SeedResult run_one_seed(const ExperimentConfig& cfg, const Dataset& ds,
                        const SyntheticEncoder& enc_a, const SyntheticEncoder& enc_b,
                        uint64_t seed, std::string& combined_csv) {
    const AgentConfig cfg_a = agent_a_config(cfg);
    const AgentConfig cfg_b = agent_b_config(cfg);
    const std::string dir = seed_dir(cfg, seed);
    fs::create_directories(fs::path(dir) / "checkpoints");
    fs::create_directories(fs::path(dir) / "logs");
    fs::create_directories(fs::path(dir) / "reports");

    std::ofstream ndjson(dir + "/logs/epochs.ndjson", std::ios::binary | std::ios::trunc);
    std::ofstream csv(dir + "/reports/metrics.csv", std::ios::binary | std::ios::trunc);
    if (!ndjson || !csv) throw ConfigError("cannot write run files under " + dir);
    csv << kMetricsCsvHeader;
    csv.flush();

    SeedResult result;
    result.seed = seed;

    AgentParams a = init_agent(cfg_a, mix_seed({seed, kTagInitA}));
    AgentParams b = init_agent(cfg_b, mix_seed({seed, kTagInitB}));

    auto eval_at = [&](int epoch, const EpochLog* game_log) {
        save_agent(checkpoint_path(dir, epoch, 'a'), cfg_a, a);
        save_agent(checkpoint_path(dir, epoch, 'b'), cfg_b, b);
        std::vector<MetricRow> rows =
            evaluate_agents(cfg_a, a, cfg_b, b, enc_a, enc_b, ds, cfg.eval, seed, epoch);
        if (game_log) {
            rows.push_back({"acceptance_rate", "AB", rate(game_log->ab)});
            rows.push_back({"acceptance_rate", "BA", rate(game_log->ba)});
        }
        std::string chunk;
        append_csv_rows(chunk, cfg, seed, epoch, rows);
        csv << chunk;
        csv.flush();
        combined_csv += chunk;
        auto& slot = result.metrics[epoch];
        bool degenerate = false;
        for (const MetricRow& r : rows) {
            slot[r.metric + "/" + r.direction] = r.value;
            if (r.metric == "degenerate") degenerate = r.value > 0.5;
        }
        result.eval_epochs.push_back(epoch);
        result.degenerate_final = degenerate;
    };

    int current_epoch = 0;
    try {
        eval_at(0, nullptr);
        for (int epoch = 1; epoch <= cfg.n_epochs; ++epoch) {
            current_epoch = epoch;
            const uint64_t epoch_seed =
                mix_seed({seed, kTagEpoch, static_cast<uint64_t>(epoch)});
            GameOpts opts = cfg.game;
            opts.temperature = epoch_temperature(cfg, epoch);
            EpochLog log = run_epoch(cfg_a, a, enc_a, cfg_b, b, enc_b, ds.train, cfg.rule,
                                     opts, cfg.hyper, epoch_seed);
            json line = {{"schema", "mhcg.epoch_log.v1"},
                         {"epoch", epoch},
                         {"temperature", opts.temperature},
                         {"accept_ab", rate(log.ab)},
                         {"accept_ba", rate(log.ba)},
                         {"mean_log_ratio_ab", log.ab.mean_log_ratio},
                         {"mean_log_ratio_ba", log.ba.mean_log_ratio},
                         {"matched_rate_ab",
                          log.ab.matched_rate >= 0 ? json(log.ab.matched_rate) : json(nullptr)},
                         {"matched_rate_ba",
                          log.ba.matched_rate >= 0 ? json(log.ba.matched_rate) : json(nullptr)},
                         {"train_a", trace_json(log.trace_a)},
                         {"train_b", trace_json(log.trace_b)}};
            ndjson << line.dump() << "\n";
            ndjson.flush();
            if (epoch % cfg.eval_every == 0 || epoch == cfg.n_epochs) eval_at(epoch, &log);
        }
    } catch (const RunAbort& e) {
        result.aborted = true;
        result.failure_epoch = current_epoch;
        result.failure = e.what();
    } catch (const DegenerateResult& e) {
        result.aborted = true;
        result.failure_epoch = current_epoch;
        result.failure = e.what();
    }

    json summary = {{"schema", "mhcg.run_summary.v1"},
                    {"condition", cfg.condition},
                    {"method", cfg.method},
                    {"run", seed_json(result)}};
    write_file(dir + "/reports/summary.json", summary.dump(2) + "\n");
    return result;
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& cfg) {
    validate(cfg);
    fs::create_directories(fs::path(cfg.output_dir) / "world");
    fs::create_directories(fs::path(cfg.output_dir) / "reports");
    write_file(cfg.output_dir + "/config.ini", config_text(cfg));

    const Dataset ds = generate_dataset(cfg.world);
    const auto encoders = make_encoder_pair(cfg.encoders, cfg.world.latent_dim);
    save_dataset(cfg.output_dir + "/world/dataset.txt", ds);
    save_encoder(cfg.output_dir + "/world/encoder_a.txt", encoders.first);
    save_encoder(cfg.output_dir + "/world/encoder_b.txt", encoders.second);

    RunReport report;
    report.condition = cfg.condition;
    report.method = cfg.method;
    report.output_dir = cfg.output_dir;
    report.vision_rsa = measured_vision_rsa(ds.val, encoders.first, encoders.second);

    json world_info = {{"schema", "mhcg.world.v1"},
                       {"n_train", static_cast<int>(ds.train.size())},
                       {"n_val", static_cast<int>(ds.val.size())},
                       {"latent_dim", cfg.world.latent_dim},
                       {"feat_dim_a", cfg.encoders.feat_dim_a},
                       {"feat_dim_b", cfg.encoders.feat_dim_b},
                       {"mix", cfg.encoders.mix},
                       {"vision_rsa", report.vision_rsa}};
    write_file(cfg.output_dir + "/world/world.json", world_info.dump(2) + "\n");

    std::string combined_csv = kMetricsCsvHeader;
    json runs = json::object();
    for (uint64_t seed : cfg.seeds) {
        SeedResult r = run_one_seed(cfg, ds, encoders.first, encoders.second, seed, combined_csv);
        runs[std::to_string(seed)] = seed_json(r);
        report.seeds.push_back(std::move(r));
    }

    write_file(cfg.output_dir + "/reports/metrics.csv", combined_csv);
    json summary = {{"schema", "mhcg.summary.v1"},
                    {"condition", cfg.condition},
                    {"method", cfg.method},
                    {"n_epochs", cfg.n_epochs},
                    {"eval_every", cfg.eval_every},
                    {"vision_rsa", report.vision_rsa},
                    {"seeds", cfg.seeds},
                    {"runs", runs}};
    write_file(cfg.output_dir + "/reports/summary.json", summary.dump(2) + "\n");
    return report;
}

std::vector<MetricRow> eval_checkpoint(const ExperimentConfig& cfg, uint64_t seed, int epoch) {
    const std::string dir = seed_dir(cfg, seed);
    if (epoch < 0) {
        std::vector<int> epochs = checkpoint_epochs(dir);
        if (epochs.empty()) throw ConfigError("no checkpoints under " + dir);
        epoch = epochs.back();
    }
    const Dataset ds = load_dataset(cfg.output_dir + "/world/dataset.txt");
    const SyntheticEncoder enc_a = load_encoder(cfg.output_dir + "/world/encoder_a.txt");
    const SyntheticEncoder enc_b = load_encoder(cfg.output_dir + "/world/encoder_b.txt");
    const AgentConfig cfg_a = agent_a_config(cfg);
    const AgentConfig cfg_b = agent_b_config(cfg);
    const AgentParams a = load_agent(checkpoint_path(dir, epoch, 'a'), cfg_a);
    const AgentParams b = load_agent(checkpoint_path(dir, epoch, 'b'), cfg_b);
    return evaluate_agents(cfg_a, a, cfg_b, b, enc_a, enc_b, ds, cfg.eval, seed, epoch);
}

namespace {

const std::vector<std::string> kCompareColumns = {
    "rsa_tt",         "rsa_tv_within",  "rsa_tv_cross", "delta_r2_within", "delta_r2_cross",
    "i2t_within",     "i2t_cross",      "t2i_within",   "t2i_cross",       "unique_sequences",
    "bias_delta_a",   "bias_delta_b"};

double metric_or_nan(const json& m, const std::string& key) {
    auto it = m.find(key);
    if (it == m.end() || it->is_null()) return kNaN;
    return it->get<double>();
}

std::map<std::string, double> derive_cells(const json& m) {
    auto pair_mean = [&](const std::string& k1, const std::string& k2) {
        return 0.5 * (metric_or_nan(m, k1) + metric_or_nan(m, k2));
    };
    std::map<std::string, double> out;
    out["rsa_tt"] = metric_or_nan(m, "rsa_tt/AB");
    out["rsa_tv_within"] = pair_mean("rsa_tv/AA", "rsa_tv/BB");
    out["rsa_tv_cross"] = pair_mean("rsa_tv/AB", "rsa_tv/BA");
    out["delta_r2_within"] = pair_mean("delta_r2/AA", "delta_r2/BB");
    out["delta_r2_cross"] = pair_mean("delta_r2/AB", "delta_r2/BA");
    out["i2t_within"] = pair_mean("retrieval_i2t/AA", "retrieval_i2t/BB");
    out["i2t_cross"] = pair_mean("retrieval_i2t/AB", "retrieval_i2t/BA");
    out["t2i_within"] = pair_mean("retrieval_t2i/AA", "retrieval_t2i/BB");
    out["t2i_cross"] = pair_mean("retrieval_t2i/AB", "retrieval_t2i/BA");
    out["unique_sequences"] = pair_mean("unique_sequences/A", "unique_sequences/B");
    out["bias_delta_a"] = metric_or_nan(m, "bias_delta/A");
    out["bias_delta_b"] = metric_or_nan(m, "bias_delta/B");
    return out;
}

}  // namespace

CompareTable compare_conditions(const std::vector<std::string>& report_dirs) {
    if (report_dirs.empty()) throw ConfigError("compare requires at least one report directory");
    CompareTable table;
    table.columns = kCompareColumns;

    // Per row: per-column list of per-seed values.
    std::vector<std::vector<std::vector<double>>> samples;
    for (const std::string& dir : report_dirs) {
        json summary;
        try {
            summary = json::parse(read_file(dir + "/reports/summary.json"));
        } catch (const json::exception& e) {
            throw ConfigError("bad summary file in " + dir + ": " + e.what());
        }
        if (summary.value("schema", "") != "mhcg.summary.v1")
            throw ConfigError("unsupported summary schema in " + dir);
        table.rows.push_back({summary.at("condition").get<std::string>(),
                              summary.at("method").get<std::string>()});
        std::vector<std::vector<double>> cols(table.columns.size());
        for (const auto& [seed, run] : summary.at("runs").items()) {
            const auto& epochs = run.at("eval_epochs");
            if (epochs.empty()) continue;
            const std::string key = epoch_key(epochs.back().get<int>());
            const json& m = run.at("metrics").at(key);
            std::map<std::string, double> cells = derive_cells(m);
            for (size_t c = 0; c < table.columns.size(); ++c)
                cols[c].push_back(cells.at(table.columns[c]));
        }
        samples.push_back(std::move(cols));
    }

    for (size_t r = 0; r < table.rows.size(); ++r) {
        std::vector<CompareCell> cells;
        for (size_t c = 0; c < table.columns.size(); ++c) {
            CompareCell cell;
            double sum = 0.0;
            for (double v : samples[r][c])
                if (std::isfinite(v)) {
                    sum += v;
                    ++cell.n;
                }
            if (cell.n == 0) {
                cell.mean = kNaN;
            } else {
                cell.mean = sum / cell.n;
                double ss = 0.0;
                for (double v : samples[r][c])
                    if (std::isfinite(v)) ss += (v - cell.mean) * (v - cell.mean);
                cell.sd = cell.n > 1 ? std::sqrt(ss / (cell.n - 1)) : 0.0;
            }
            cells.push_back(cell);
        }
        table.cells.push_back(std::move(cells));
    }

    // Mark cells above the matching condition's no_com row.
    for (size_t r = 0; r < table.rows.size(); ++r) {
        if (table.rows[r].second == "no_com") continue;
        for (size_t base = 0; base < table.rows.size(); ++base) {
            if (table.rows[base].first != table.rows[r].first ||
                table.rows[base].second != "no_com")
                continue;
            for (size_t c = 0; c < table.columns.size(); ++c) {
                const CompareCell& own = table.cells[r][c];
                const CompareCell& ref = table.cells[base][c];
                if (std::isfinite(own.mean) && std::isfinite(ref.mean) && own.mean > ref.mean)
                    table.cells[r][c].beats_no_com = true;
            }
        }
    }
    return table;
}

void write_compare(const CompareTable& table, const std::string& out_prefix) {
    std::string csv = "# schema: mhcg.compare_csv.v1\n";
    csv += "condition,method,metric,mean,sd,n_seeds,beats_no_com\n";
    for (size_t r = 0; r < table.rows.size(); ++r)
        for (size_t c = 0; c < table.columns.size(); ++c) {
            const CompareCell& cell = table.cells[r][c];
            csv += table.rows[r].first + "," + table.rows[r].second + "," + table.columns[c] +
                   "," + g17(cell.mean) + "," + g17(cell.sd) + "," + std::to_string(cell.n) +
                   "," + (cell.beats_no_com ? "1" : "0") + "\n";
        }
    write_file(out_prefix + ".csv", csv);

    json rows = json::array();
    for (size_t r = 0; r < table.rows.size(); ++r) {
        json cells = json::object();
        for (size_t c = 0; c < table.columns.size(); ++c) {
            const CompareCell& cell = table.cells[r][c];
            cells[table.columns[c]] = {{"mean", cell.mean},
                                       {"sd", cell.sd},
                                       {"n", cell.n},
                                       {"beats_no_com", cell.beats_no_com}};
        }
        rows.push_back({{"condition", table.rows[r].first},
                        {"method", table.rows[r].second},
                        {"cells", cells}});
    }
    json j = {{"schema", "mhcg.compare.v1"}, {"columns", table.columns}, {"rows", rows}};
    write_file(out_prefix + ".json", j.dump(2) + "\n");

    // Aligned text table: mean+-sd per cell, * marking cells above no_com.
    std::vector<std::vector<std::string>> grid;
    std::vector<std::string> header = {"condition", "method"};
    header.insert(header.end(), table.columns.begin(), table.columns.end());
    grid.push_back(header);
    for (size_t r = 0; r < table.rows.size(); ++r) {
        std::vector<std::string> row = {table.rows[r].first, table.rows[r].second};
        for (size_t c = 0; c < table.columns.size(); ++c) {
            const CompareCell& cell = table.cells[r][c];
            char buf[64];
            if (std::isfinite(cell.mean))
                std::snprintf(buf, sizeof(buf), "%.3f+-%.3f%s", cell.mean, cell.sd,
                              cell.beats_no_com ? "*" : "");
            else
                std::snprintf(buf, sizeof(buf), "nan");
            row.push_back(buf);
        }
        grid.push_back(row);
    }
    std::vector<size_t> widths(grid[0].size(), 0);
    for (const auto& row : grid)
        for (size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], row[c].size());
    std::string txt;
    for (const auto& row : grid) {
        for (size_t c = 0; c < row.size(); ++c) {
            txt += row[c];
            if (c + 1 < row.size()) txt += std::string(widths[c] - row[c].size() + 2, ' ');
        }
        txt += "\n";
    }
    write_file(out_prefix + ".txt", txt);
}

namespace {

int cmd_gen_world(const std::string& config_path, const std::string& out) {
    ExperimentConfig cfg = load_config(config_path);
    const std::string dir = out.empty() ? cfg.output_dir + "/world" : out;
    const Dataset ds = generate_dataset(cfg.world);
    const auto encoders = make_encoder_pair(cfg.encoders, cfg.world.latent_dim);
    fs::create_directories(dir);
    save_dataset(dir + "/dataset.txt", ds);
    save_encoder(dir + "/encoder_a.txt", encoders.first);
    save_encoder(dir + "/encoder_b.txt", encoders.second);
    const double rsa = measured_vision_rsa(ds.val, encoders.first, encoders.second);
    json world_info = {{"schema", "mhcg.world.v1"},
                       {"n_train", static_cast<int>(ds.train.size())},
                       {"n_val", static_cast<int>(ds.val.size())},
                       {"latent_dim", cfg.world.latent_dim},
                       {"feat_dim_a", cfg.encoders.feat_dim_a},
                       {"feat_dim_b", cfg.encoders.feat_dim_b},
                       {"mix", cfg.encoders.mix},
                       {"vision_rsa", rsa}};
    write_file(dir + "/world.json", world_info.dump(2) + "\n");
    std::printf("world: n_train=%zu n_val=%zu vision_rsa=%.4f -> %s\n", ds.train.size(),
                ds.val.size(), rsa, dir.c_str());
    return 0;
}

int cmd_run(const std::string& config_path, bool have_seed, uint64_t seed, int stop_at_epoch,
            const std::string& out) {
    ExperimentConfig cfg = load_config(config_path);
    if (have_seed) cfg.seeds = {seed};
    if (!out.empty()) cfg.output_dir = out;
    if (stop_at_epoch > 0) {
        cfg.n_epochs = std::min(cfg.n_epochs, stop_at_epoch);
        cfg.eval_every = std::min(cfg.eval_every, cfg.n_epochs);
    }
    RunReport report = run_experiment(cfg);
    bool any_aborted = false;
    for (const SeedResult& r : report.seeds) {
        if (r.aborted) {
            any_aborted = true;
            std::printf("seed %llu: aborted at epoch %d: %s\n",
                        static_cast<unsigned long long>(r.seed), r.failure_epoch,
                        r.failure.c_str());
        } else {
            std::printf("seed %llu: complete, %zu evals, degenerate=%d\n",
                        static_cast<unsigned long long>(r.seed), r.eval_epochs.size(),
                        r.degenerate_final ? 1 : 0);
        }
    }
    std::printf("reports under %s\n", report.output_dir.c_str());
    return any_aborted ? 2 : 0;
}

int cmd_eval(const std::string& config_path, uint64_t seed, int epoch, const std::string& out) {
    ExperimentConfig cfg = load_config(config_path);
    if (epoch < 0) {
        std::vector<int> epochs = checkpoint_epochs(seed_dir(cfg, seed));
        if (epochs.empty())
            throw ConfigError("no checkpoints under " + seed_dir(cfg, seed));
        epoch = epochs.back();
    }
    std::vector<MetricRow> rows = eval_checkpoint(cfg, seed, epoch);
    std::string csv = kMetricsCsvHeader;
    append_csv_rows(csv, cfg, seed, epoch, rows);
    if (out.empty())
        std::fputs(csv.c_str(), stdout);
    else
        write_file(out, csv);
    return 0;
}

int cmd_diagnose(const std::string& config_path, uint64_t seed, const std::string& out,
                 const DiagOpts& opts) {
    ExperimentConfig cfg = load_config(config_path);
    const std::string dir = seed_dir(cfg, seed);
    std::vector<int> epochs = checkpoint_epochs(dir);
    if (epochs.empty()) throw ConfigError("no checkpoints under " + dir);
    const Dataset ds = load_dataset(cfg.output_dir + "/world/dataset.txt");
    const SyntheticEncoder enc_a = load_encoder(cfg.output_dir + "/world/encoder_a.txt");
    const SyntheticEncoder enc_b = load_encoder(cfg.output_dir + "/world/encoder_b.txt");
    const AgentConfig cfg_a = agent_a_config(cfg);
    const AgentConfig cfg_b = agent_b_config(cfg);
    std::vector<std::pair<int, AgentParams>> ckpts_a, ckpts_b;
    for (int epoch : epochs) {
        ckpts_a.push_back({epoch, load_agent(checkpoint_path(dir, epoch, 'a'), cfg_a)});
        ckpts_b.push_back({epoch, load_agent(checkpoint_path(dir, epoch, 'b'), cfg_b)});
    }
    std::vector<CurvePoint> curve_a =
        consistency_curve(cfg_a, ckpts_a, enc_a, ds.val, opts, seed);
    std::vector<CurvePoint> curve_b =
        consistency_curve(cfg_b, ckpts_b, enc_b, ds.val, opts, seed);
    const std::string path = out.empty() ? dir + "/reports/consistency.csv" : out;
    write_consistency_csv(path, {{"A", curve_a}, {"B", curve_b}});
    std::printf("consistency curve (%zu checkpoints) -> %s\n", epochs.size(), path.c_str());
    return 0;
}

int cmd_compare(const std::vector<std::string>& dirs, const std::string& out) {
    CompareTable table = compare_conditions(dirs);
    write_compare(table, out);
    std::fputs(read_file(out + ".txt").c_str(), stdout);
    return 0;
}

int cmd_chain_test(long steps, uint64_t seed) {
    ChainSpec spec;
    for (int i = 0; i < 9; ++i) {
        GaussParams gp;
        gp.loc = Vec(2);
        gp.loc << static_cast<double>(i % 3), static_cast<double>(i / 3);
        gp.scale = Vec::Ones(2);
        spec.densities.push_back(gp);
        spec.proposal_weights.push_back(1.0 + i);
    }
    spec.h = Vec(2);
    spec.h << 0.7, 1.3;

    std::vector<double> target(9);
    double total = 0.0;
    for (int i = 0; i < 9; ++i) {
        target[i] = spec.proposal_weights[i] * std::exp(log_density(spec.densities[i], spec.h));
        total += target[i];
    }
    for (double& t : target) t /= total;

    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(seed);
    std::vector<double> freq = run_chain_exactness_test(spec, steps, rng);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    double tv = 0.0;
    for (int i = 0; i < 9; ++i) tv += std::abs(freq[i] - target[i]);
    tv *= 0.5;
    std::printf("chain-test: states=9 steps=%ld tv=%.5f elapsed=%.2fs\n", steps, tv, elapsed);
    return tv < 0.05 ? 0 : 2;
}

}  // namespace

int cli_main(std::vector<std::string> args) {
    CLI::App app{"captioning-game simulator and evaluation suite"};
    app.require_subcommand(1);

    std::string config_path, out;
    uint64_t seed = 0;
    int stop_at_epoch = -1, epoch = -1;
    long steps = 100000;
    uint64_t chain_seed = 1;
    DiagOpts diag_opts;
    std::vector<std::string> compare_dirs;

    CLI::App* gen = app.add_subcommand("gen-world", "generate and save the synthetic world");
    gen->add_option("--config", config_path, "experiment config file")->required();
    gen->add_option("--out", out, "output directory (default: <output_dir>/world)");

    CLI::App* run = app.add_subcommand("run", "run the configured experiment");
    run->add_option("--config", config_path, "experiment config file")->required();
    CLI::Option* run_seed = run->add_option("--seed", seed, "run only this seed");
    run->add_option("--stop-at-epoch", stop_at_epoch, "halt after this many epochs");
    run->add_option("--out", out, "override output_dir");

    CLI::App* ev = app.add_subcommand("eval", "re-run the metric battery from a checkpoint");
    ev->add_option("--config", config_path, "experiment config file")->required();
    ev->add_option("--seed", seed, "run seed")->required();
    ev->add_option("--epoch", epoch, "checkpoint epoch (default: newest)");
    ev->add_option("--out", out, "CSV output path (default: stdout)");

    CLI::App* diag = app.add_subcommand("diagnose", "self-consistency curve over checkpoints");
    diag->add_option("--config", config_path, "experiment config file")->required();
    diag->add_option("--seed", seed, "run seed")->required();
    diag->add_option("--out", out, "CSV output path");
    diag->add_option("--images", diag_opts.n_images, "validation images per checkpoint");
    diag->add_option("--samples", diag_opts.n_samples, "sampled captions per image");
    diag->add_option("--negatives", diag_opts.n_negatives, "negative captions per image");
    diag->add_option("--temperature", diag_opts.temperature, "caption sampling temperature");

    CLI::App* cmp = app.add_subcommand("compare", "aggregate runs into comparison tables");
    cmp->add_option("--out", out, "output path prefix")->required();
    cmp->add_option("dirs", compare_dirs, "run output directories")->required();

    CLI::App* chain = app.add_subcommand("chain-test", "acceptance-kernel exactness check");
    chain->add_option("--steps", steps, "chain steps");
    chain->add_option("--seed", chain_seed, "chain rng seed");

    try {
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand(gen)) return cmd_gen_world(config_path, out);
        if (app.got_subcommand(run))
            return cmd_run(config_path, run_seed->count() > 0, seed, stop_at_epoch, out);
        if (app.got_subcommand(ev)) return cmd_eval(config_path, seed, epoch, out);
        if (app.got_subcommand(diag)) return cmd_diagnose(config_path, seed, out, diag_opts);
        if (app.got_subcommand(cmp)) return cmd_compare(compare_dirs, out);
        if (app.got_subcommand(chain)) return cmd_chain_test(steps, chain_seed);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const RunAbort& e) {
        std::fprintf(stderr, "runtime abort: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 1;
}

}  // namespace mhcg::runner

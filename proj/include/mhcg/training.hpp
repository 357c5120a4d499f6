// Loss functions with analytic gradients and the per-epoch agent update:
// a captioning pass over the selected targets (lm + contrastive + matching
// on the shared parameters), then a density-head calibration pass.
#pragma once

#include <vector>

#include "mhcg/agent.hpp"
#include "mhcg/common.hpp"
#include "mhcg/rng.hpp"

namespace mhcg {

struct TrainExample {
    Vec feat;              // the learner's own encoded view of the item
    TokenSequence target;  // the selected caption it trains toward
};

enum class OptimKind { sgd, adam };

struct TrainHyper {
    double lr_vlm = 0.05;
    double lr_dens = 0.05;
    int n_vlm_epochs = 1;
    int n_dens_epochs = 3;
    int batch_size = 16;
    int n_neg_itm = 1;
    double weight_itc = 1.0;
    double weight_itm = 1.0;
    double weight_lm = 1.0;
    OptimKind optimizer = OptimKind::sgd;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
};

// One row of the loss trace, recorded once per pass over the data.
struct EpochLoss {
    double lm = 0.0;
    double itc = 0.0;
    double itm = 0.0;
    double probvlm = 0.0;
    double grad_norm = 0.0;
};

struct TrainTrace {
    std::vector<EpochLoss> vlm;
    std::vector<EpochLoss> dens;
};

// Each loss returns its unweighted batch-mean value. When `grads` is given,
// weight * (d loss / d params) is accumulated into it; untouched parameters
// keep whatever the struct already holds, so callers zero it per batch.
double lm_loss(const AgentConfig& cfg, const AgentParams& p,
               const std::vector<TrainExample>& batch, AgentGrads* grads = nullptr,
               double weight = 1.0);

double itc_loss(const AgentConfig& cfg, const AgentParams& p,
                const std::vector<TrainExample>& batch, AgentGrads* grads = nullptr,
                double weight = 1.0);

// Pairs every positive with n_neg uniformly drawn in-batch mismatched
// captions. A batch of one has no mismatch to draw, so only positives score.
double itm_loss(const AgentConfig& cfg, const AgentParams& p,
                const std::vector<TrainExample>& batch, int n_neg, Rng& rng,
                AgentGrads* grads = nullptr, double weight = 1.0);

// Calibrates both density heads toward the projected visual embedding of
// each example; gradients reach only the density-head parameters.
double probvlm_loss(const AgentConfig& cfg, const AgentParams& p,
                    const std::vector<TrainExample>& batch, AgentGrads* grads = nullptr,
                    double weight = 1.0);

// Runs n_vlm_epochs of minibatch updates on the shared parameters with the
// weighted combined loss, then n_dens_epochs on the density heads. Optimizer
// state is created fresh inside the call. Deterministic given rng state and
// example order. Throws RunAbort when a loss or gradient turns non-finite.
AgentParams update_agent(const AgentConfig& cfg, AgentParams agent,
                         const std::vector<TrainExample>& examples,
                         const TrainHyper& hyper, Rng& rng, TrainTrace* trace = nullptr);

}  // namespace mhcg

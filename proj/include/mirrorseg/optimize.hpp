#pragma once

#include "mirrorseg/checkpoint.hpp"
#include "mirrorseg/dataset.hpp"
#include "mirrorseg/mirror_net.hpp"
#include "mirrorseg/sampler.hpp"
#include "mirrorseg/tensor.hpp"

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mirrorseg {

enum class Stage { CT, PET };

inline const char* stage_name(Stage s) { return s == Stage::CT ? "ct" : "pet"; }

struct TrainConfig {
    Stage stage = Stage::PET;
    int n_epochs = 200;
    double lr0 = 0.004;
    double poly_power = 0.9;
    double momentum = 0.9;
    int batch_size = 4;
    int64_t patch_size = 64;
    int swa_keep_every = 10;
    int swa_average_last = 6;
    uint64_t seed = 0;

    void validate() const;
};

// Polynomial decay: lr0 * (1 - ep/n_ep)^power, ep being the 0-based count of
// completed epochs.
double lr_schedule(int ep, int n_ep, double lr0, double power = 0.9);

// Soft Dice complement averaged over batch and channels; target is 0/1
// (one-hot per channel in the multi-class case).
Tensor dice_loss(const Tensor& probs, const Tensor& target, float smooth = 1e-5f);

// Mean binary cross-entropy from logits, overflow-safe.
Tensor bce_loss(const Tensor& logits, const Tensor& target);

// Mean binary cross-entropy on probabilities already in [0,1] (the per-channel
// form applied after softmax); logs are clamped like the usual BCELoss.
Tensor bce_probs_loss(const Tensor& probs, const Tensor& target);

// v <- momentum * v + g ; p <- p - lr * v
void sgd_step(std::span<float> param, std::span<const float> grad, std::span<float> velocity,
              double lr, double momentum);

class SGD {
public:
    SGD(std::vector<NamedParam> params, double momentum);
    void step(double lr);
    void zero_grad();

private:
    std::vector<NamedParam> params_;
    std::vector<std::vector<float>> velocity_;
    double momentum_;
};

// Elementwise arithmetic mean of each named parameter; value-sorted per
// element before summing, so the result is independent of checkpoint order.
std::vector<NamedParam> swa_average(const std::vector<Checkpoint>& checkpoints);

struct EpochRecord {
    int epoch = 0;  // 1-based, the epoch just completed
    Stage stage = Stage::CT;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> log;
    std::vector<Checkpoint> kept;  // snapshots on the keep-every grid
};

using EpochMonitor = std::function<void(const EpochRecord&)>;

// One training stage over preprocessed studies. Per epoch: balanced patch
// resampling, minibatch SGD with the poly schedule, a validation pass with
// augmentation disabled, and checkpoints on the keep-every grid (written to
// checkpoint_dir when non-empty). The PET stage requires a frozen CT branch
// and finishes by loading the SWA average of the last kept checkpoints.
TrainResult train_stage(MirrorNet& net, const std::vector<Study>& train_set,
                        const std::vector<Study>& val_set, const TrainConfig& cfg,
                        const AugmentConfig& aug, const std::string& checkpoint_dir = "",
                        const EpochMonitor& monitor = {});

void write_loss_log(const std::vector<EpochRecord>& log, const std::string& path);

} // namespace mirrorseg

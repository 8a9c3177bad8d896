#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cipher/dataio/augment.hpp"
#include "cipher/dataio/dataset.hpp"
#include "cipher/dataio/image.hpp"
#include "cipher/nn/checkpoint.hpp"
#include "cipher/progan/networks.hpp"

namespace cipher::detector {

struct FinetuneConfig {
    int epochs = 50;
    double lr = 1e-4;
    int batch_size = 64;
    double label_smoothing = 0.1;
    double dropout_p = 0.2;  // final-block activations, training only
    dataio::AugmentConfig augment;
    std::uint64_t seed = 42;
    bool freeze_backbone = false;  // train only the final block
    int resolution = 0;            // 0 accepts the checkpoint's resolution

    void validate() const;
};

enum class Decision { Real, Fake };

const char* decision_name(Decision d);

struct DetectionScore {
    double probability = 0.0;  // probability of the fake class
    Decision decision = Decision::Real;
    double threshold = 0.5;
};

DetectionScore make_score(double probability, double threshold);

// y (1 - alpha) + alpha / 2.
std::vector<double> smooth_labels(std::span<const int> y, double alpha);

// Fine-tuned discriminator used as a real/fake classifier. The probability of
// "fake" is sigmoid(-logit): the GAN discriminator scores realness, so the
// pretrained head already points the right way before any fine-tuning.
class Detector {
public:
    Detector(progan::Discriminator disc, double mbstd_constant);

    static Detector from_checkpoint(const nn::Checkpoint& ckpt);
    nn::Checkpoint to_checkpoint(std::map<std::string, std::string> meta = {}) const;

    // Eval mode: no dropout, fixed minibatch statistic. Batch-size invariant.
    std::vector<double> probabilities(const dataio::ImageTensor& images) const;
    std::vector<DetectionScore> detect(const dataio::ImageTensor& images, double threshold = 0.5) const;

    // Training-mode fake-class logits (negated discriminator logits).
    nn::Var fake_logits(const nn::Var& images, const progan::DiscriminatorOptions& opts) const;

    const progan::Discriminator& backbone() const { return disc_; }
    double mbstd_constant() const { return mbstd_constant_; }
    void set_mbstd_constant(double v) { mbstd_constant_ = v; }
    int resolution() const { return disc_.arch().resolution; }
    progan::ProgressiveStage stage() const;

private:
    progan::Discriminator disc_;
    double mbstd_constant_ = 0.0;
};

std::vector<DetectionScore> detect(const dataio::ImageTensor& images, const nn::Checkpoint& detector_ckpt, double threshold = 0.5);

// Mean live minibatch statistic over the dataset in fixed order and fixed batches.
double reference_statistic(const progan::Discriminator& disc, const dataio::LabeledDataset& data, int batch_size);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct FinetuneResult {
    nn::Checkpoint final_detector;
    nn::Checkpoint best_detector;
    int best_epoch = 0;
    std::vector<EpochLog> history;
    std::vector<std::string> skipped;  // images that failed to load
};

// Fine-tunes on the train split, selects on the val split. A dataset without a
// val split keeps the final weights as best.
FinetuneResult finetune(const nn::Checkpoint& disc_ckpt, const dataio::LabeledDataset& dataset, const FinetuneConfig& cfg,
                        const std::function<void(const EpochLog&)>& on_epoch = {});

// Weighted mean of member probabilities; empty weights mean uniform.
std::vector<double> ensemble_score(const std::vector<std::vector<double>>& scores, std::span<const double> weights = {});

inline constexpr const char* kDetectorKind = "detector.progan";

}  // namespace cipher::detector

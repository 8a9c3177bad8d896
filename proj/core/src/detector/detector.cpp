#include "cipher/detector/detector.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <cmath>
#include <numeric>

#include "cipher/dataio/loader.hpp"
#include "cipher/error.hpp"
#include "cipher/nn/optim.hpp"

namespace cipher::detector {

namespace {

constexpr std::size_t kEvalBatch = 64;

double stable_sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

struct EvalStats {
    double loss = 0.0;
    double accuracy = 0.0;
};

EvalStats evaluate_split(const Detector& det, const dataio::LabeledDataset& data) {
    dataio::BatchLoader loader(data, {kEvalBatch, false, 0, det.resolution(), true});
    loader.start_epoch(0);
    double loss = 0.0;
    std::size_t correct = 0, count = 0;
    while (auto batch = loader.next()) {
        const auto p = det.probabilities(batch->images);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const int y = batch->labels[i];
            const double q = std::clamp(y == dataio::kFakeLabel ? p[i] : 1.0 - p[i], 1e-12, 1.0);
            loss -= std::log(q);
            correct += (p[i] >= 0.5) == (y == dataio::kFakeLabel);
            ++count;
        }
    }
    if (count == 0) return {};
    return {loss / count, static_cast<double>(correct) / count};
}

}  // namespace

void FinetuneConfig::validate() const {
    if (epochs < 0) throw ConfigError("ft.epochs must be >= 0");
    if (batch_size < 1 || lr <= 0.0) throw ConfigError("ft.batch_size and ft.lr must be positive");
    if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("ft.label_smoothing must lie in [0, 1)");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("ft.dropout must lie in [0, 1)");
    augment.validate();
}

const char* decision_name(Decision d) { return d == Decision::Fake ? "fake" : "real"; }

DetectionScore make_score(double probability, double threshold) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw DomainError("decision threshold must lie in [0, 1]");
    if (!(probability >= 0.0 && probability <= 1.0)) throw DomainError("probability must lie in [0, 1]");
    return {probability, probability >= threshold ? Decision::Fake : Decision::Real, threshold};
}

std::vector<double> smooth_labels(std::span<const int> y, double alpha) {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw DomainError("label smoothing alpha must lie in [0, 1)");
    std::vector<double> out;
    out.reserve(y.size());
    for (int v : y) {
        if (v != 0 && v != 1) throw DomainError("labels must be 0 or 1");
        out.push_back(v * (1.0 - alpha) + alpha / 2.0);
    }
    return out;
}

Detector::Detector(progan::Discriminator disc, double mbstd_constant) : disc_(std::move(disc)), mbstd_constant_(mbstd_constant) {}

progan::ProgressiveStage Detector::stage() const { return progan::ProgressiveStage::stable(disc_.arch().num_stages() - 1); }

Detector Detector::from_checkpoint(const nn::Checkpoint& ckpt) {
    if (ckpt.kind != kDetectorKind) throw CheckpointError("expected a detector checkpoint, got kind '" + ckpt.kind + "'");
    auto as_disc = ckpt;
    as_disc.kind = progan::kDiscriminatorKind;
    return Detector(progan::Discriminator::from_checkpoint(as_disc), std::stod(ckpt.meta_at("mbstd_constant")));
}

nn::Checkpoint Detector::to_checkpoint(std::map<std::string, std::string> meta) const {
    meta["mbstd_constant"] = fmt::format("{:.17g}", mbstd_constant_);
    auto ckpt = disc_.to_checkpoint(std::move(meta));
    ckpt.kind = kDetectorKind;
    return ckpt;
}

nn::Var Detector::fake_logits(const nn::Var& images, const progan::DiscriminatorOptions& opts) const {
    return nn::scale(disc_.logits(images, stage(), opts), -1.0);
}

std::vector<double> Detector::probabilities(const dataio::ImageTensor& images) const {
    if (images.batch() == 0) return {};
    if (images.resolution() != resolution()) {
        throw ShapeError("detector expects " + std::to_string(resolution()) + "px images, got " + std::to_string(images.resolution()));
    }
    nn::NoGradGuard no_grad;
    progan::DiscriminatorOptions opts;
    opts.mbstd_fixed = mbstd_constant_;
    const auto logits = disc_.logits(nn::Var(images.tensor()), stage(), opts);
    std::vector<double> p;
    p.reserve(static_cast<std::size_t>(images.batch()));
    for (double z : logits.value().vec()) p.push_back(stable_sigmoid(-z));
    return p;
}

std::vector<DetectionScore> Detector::detect(const dataio::ImageTensor& images, double threshold) const {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw DomainError("detection threshold must lie in [0, 1]");
    std::vector<DetectionScore> out;
    for (double p : probabilities(images)) out.push_back(make_score(p, threshold));
    return out;
}

std::vector<DetectionScore> detect(const dataio::ImageTensor& images, const nn::Checkpoint& detector_ckpt, double threshold) {
    return Detector::from_checkpoint(detector_ckpt).detect(images, threshold);
}

double reference_statistic(const progan::Discriminator& disc, const dataio::LabeledDataset& data, int batch_size) {
    if (data.empty()) return 0.0;
    const auto stage = progan::ProgressiveStage::stable(disc.arch().num_stages() - 1);
    dataio::BatchLoader loader(data, {static_cast<std::size_t>(batch_size), false, 0, disc.arch().resolution, true});
    loader.start_epoch(0);
    double total = 0.0;
    std::size_t batches = 0;
    while (auto batch = loader.next()) {
        if (batch->images.batch() < 2) continue;  // a single image has no spread
        total += disc.minibatch_statistic(nn::Var(batch->images.tensor()), stage);
        ++batches;
    }
    return batches == 0 ? 0.0 : total / static_cast<double>(batches);
}

FinetuneResult finetune(const nn::Checkpoint& disc_ckpt, const dataio::LabeledDataset& dataset, const FinetuneConfig& cfg,
                        const std::function<void(const EpochLog&)>& on_epoch) {
    cfg.validate();
    auto disc = progan::Discriminator::from_checkpoint(disc_ckpt);
    if (cfg.resolution != 0 && cfg.resolution != disc.arch().resolution) {
        throw CheckpointError(fmt::format("discriminator checkpoint is {}px but the configured resolution is {}px",
                                          disc.arch().resolution, cfg.resolution));
    }
    if (!dataset.balanced()) {
        spdlog::warn("finetune: dataset is unbalanced ({} real, {} fake); proceeding", dataset.count_label(dataio::kRealLabel),
                     dataset.count_label(dataio::kFakeLabel));
    }
    const auto train = dataset.subset(dataio::Split::Train);
    const auto val = dataset.subset(dataio::Split::Val);
    if (train.empty() && cfg.epochs > 0) throw DataError("finetune: dataset has no training items");

    Detector det(std::move(disc), 0.0);
    const auto params = det.backbone().parameters();
    if (cfg.freeze_backbone) {
        nn::set_trainable(params, false);
        nn::set_trainable(det.backbone().final_block_parameters(), true);
    }
    nn::Adam opt(params, {0.9, 0.999, 1e-8});
    std::mt19937_64 aug_rng(cfg.seed ^ 0x61756731ULL);
    std::mt19937_64 drop_rng(cfg.seed ^ 0x64726f70ULL);
    dataio::BatchLoader loader(train, {static_cast<std::size_t>(cfg.batch_size), true, cfg.seed, det.resolution(), true});

    FinetuneResult result;
    auto snapshot = [&](int epoch, const EpochLog* log) {
        std::map<std::string, std::string> meta{{"epoch", std::to_string(epoch)}};
        if (log) meta["val_accuracy"] = fmt::format("{:.17g}", log->val_accuracy);
        return det.to_checkpoint(meta);
    };

    det.set_mbstd_constant(reference_statistic(det.backbone(), train, cfg.batch_size));
    double best_val = -1.0;
    result.best_detector = snapshot(0, nullptr);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        loader.start_epoch(epoch);
        double loss_sum = 0.0;
        std::size_t correct = 0, seen = 0;
        while (auto batch = loader.next()) {
            const auto images = dataio::augment(batch->images, cfg.augment, aug_rng);
            progan::DiscriminatorOptions opts;
            opts.training = true;
            opts.dropout_p = cfg.dropout_p;
            opts.rng = &drop_rng;
            nn::zero_grads(params);
            const auto logits = det.fake_logits(nn::Var(images.tensor()), opts);
            const auto targets = smooth_labels(batch->labels, cfg.label_smoothing);
            const auto loss = nn::bce_with_logits(logits, nn::Tensor(nn::Shape{logits.dim(0)}, targets));
            nn::backward(loss);
            opt.step(cfg.lr);
            const auto n = batch->labels.size();
            loss_sum += loss.value()[0] * static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) correct += (logits.value()[i] >= 0.0) == (batch->labels[i] == dataio::kFakeLabel);
            seen += n;
        }
        for (const auto& s : loader.report().skipped) {
            if (std::find(result.skipped.begin(), result.skipped.end(), s) == result.skipped.end()) result.skipped.push_back(s);
        }
        det.set_mbstd_constant(reference_statistic(det.backbone(), train, cfg.batch_size));
        EpochLog log;
        log.epoch = epoch;
        log.train_loss = seen ? loss_sum / seen : 0.0;
        log.train_accuracy = seen ? static_cast<double>(correct) / seen : 0.0;
        if (!val.empty()) {
            const auto stats = evaluate_split(det, val);
            log.val_loss = stats.loss;
            log.val_accuracy = stats.accuracy;
        }
        result.history.push_back(log);
        if (on_epoch) on_epoch(log);
        if (val.empty() || log.val_accuracy > best_val) {
            best_val = log.val_accuracy;
            result.best_epoch = epoch;
            result.best_detector = snapshot(epoch, &log);
        }
    }
    nn::set_trainable(params, true);
    result.final_detector = snapshot(cfg.epochs, result.history.empty() ? nullptr : &result.history.back());
    return result;
}

std::vector<double> ensemble_score(const std::vector<std::vector<double>>& scores, std::span<const double> weights) {
    if (scores.empty()) throw ConfigError("ensemble needs at least one member");
    const auto n = scores.front().size();
    for (const auto& s : scores) {
        if (s.size() != n) throw ShapeError("ensemble members disagree in length");
    }
    std::vector<double> w(weights.begin(), weights.end());
    if (w.empty()) w.assign(scores.size(), 1.0 / static_cast<double>(scores.size()));
    if (w.size() != scores.size()) throw ConfigError("ensemble.weights needs one weight per member");
    double sum = 0.0;
    for (double x : w) {
        if (!(x >= 0.0)) throw ConfigError("ensemble weights must be nonnegative");
        sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(fmt::format("ensemble weights sum to {}, expected 1", sum));
    std::vector<double> out(n, 0.0);
    for (std::size_t m = 0; m < scores.size(); ++m) {
        for (std::size_t i = 0; i < n; ++i) out[i] += w[m] * scores[m][i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        // keep the convex-combination bounds exact under rounding
        double lo = scores[0][i], hi = scores[0][i];
        for (const auto& s : scores) {
            lo = std::min(lo, s[i]);
            hi = std::max(hi, s[i]);
        }
        out[i] = std::clamp(out[i], lo, hi);
    }
    return out;
}

}  // namespace cipher::detector

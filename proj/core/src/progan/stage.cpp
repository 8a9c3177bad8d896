#include "cipher/progan/stage.hpp"

#include <string>

#include "cipher/error.hpp"

namespace cipher::progan {

int stage_resolution(int k) {
    if (k < 0 || k > 4) throw ShapeError("stage index " + std::to_string(k) + " outside 0..4");
    return 4 << k;
}

int stage_for_resolution(int resolution) {
    for (int k = 0; k <= 4; ++k) {
        if (stage_resolution(k) == resolution) return k;
    }
    throw ShapeError("resolution " + std::to_string(resolution) + " is not one of 4, 8, 16, 32, 64");
}

ProgressiveStage ProgressiveStage::stable(int k) { return {k, stage_resolution(k), 1.0, Phase::Stable}; }

ProgressiveStage ProgressiveStage::fading(int k, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw DomainError("fade alpha " + std::to_string(alpha) + " outside [0,1]");
    return {k, stage_resolution(k), alpha, Phase::Fading};
}

StageSchedule::StageSchedule(int first_stage, int last_stage, std::int64_t iters_per_stage, std::int64_t fade_iters)
    : first_(first_stage), last_(last_stage), iters_per_stage_(iters_per_stage), fade_iters_(fade_iters) {
    if (first_ < 0 || last_ < first_ || last_ > 4) throw ConfigError("invalid progressive stage range");
    if (iters_per_stage_ <= 0 || fade_iters_ < 0 || fade_iters_ > iters_per_stage_) {
        throw ConfigError("need 0 <= fade_iters <= iters_per_stage and iters_per_stage > 0");
    }
}

std::int64_t StageSchedule::total_iterations() const { return (last_ - first_ + 1) * iters_per_stage_; }

ProgressiveStage StageSchedule::at(std::int64_t iteration) const {
    const auto clamped = std::min(iteration, total_iterations() - 1);
    const int k = first_ + static_cast<int>(clamped / iters_per_stage_);
    const auto local = clamped % iters_per_stage_;
    if (k == first_ || local >= fade_iters_) return ProgressiveStage::stable(k);
    return ProgressiveStage::fading(k, static_cast<double>(local) / static_cast<double>(fade_iters_));
}

}  // namespace cipher::progan

#pragma once

#include <cstdint>

namespace cipher::progan {

enum class Phase { Fading, Stable };

// Stage k trains at 4 * 2^k pixels. While fading, fade_alpha blends the new block in.
struct ProgressiveStage {
    int index = 0;
    int resolution = 4;
    double fade_alpha = 1.0;
    Phase phase = Phase::Stable;

    static ProgressiveStage stable(int k);
    // Throws DomainError when alpha is outside [0, 1].
    static ProgressiveStage fading(int k, double alpha);

    bool is_fading() const { return phase == Phase::Fading; }
};

int stage_resolution(int k);
// Inverse of stage_resolution; throws ShapeError for unsupported sizes.
int stage_for_resolution(int resolution);

// Maps a global iteration onto (stage, fade_alpha). Trains stages first..last, each for
// iters_per_stage iterations; every stage after the first fades in linearly over
// fade_iters iterations and then holds alpha = 1.
class StageSchedule {
public:
    StageSchedule(int first_stage, int last_stage, std::int64_t iters_per_stage, std::int64_t fade_iters);

    ProgressiveStage at(std::int64_t iteration) const;
    std::int64_t total_iterations() const;
    int first_stage() const { return first_; }
    int last_stage() const { return last_; }

private:
    int first_;
    int last_;
    std::int64_t iters_per_stage_;
    std::int64_t fade_iters_;
};

}  // namespace cipher::progan

#include "cipher/dataio/loader.hpp"

#include <spdlog/spdlog.h>

#include <numeric>
#include <random>

#include "cipher/error.hpp"

namespace cipher::dataio {

BatchLoader::BatchLoader(LabeledDataset dataset, LoaderOptions options)
    : dataset_(std::move(dataset)), options_(options) {
    if (dataset_.empty()) throw DataError("batch loader needs a nonempty dataset");
    if (options_.batch_size < 1) throw ConfigError("batch size must be >= 1");
    start_epoch(0);
}

std::vector<std::size_t> BatchLoader::epoch_order(std::size_t n, bool shuffle, std::uint64_t seed, std::int64_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
        std::mt19937_64 rng(seq);
        std::shuffle(order.begin(), order.end(), rng);
    }
    return order;
}

void BatchLoader::start_epoch(std::int64_t epoch) {
    order_ = epoch_order(dataset_.size(), options_.shuffle, options_.seed, epoch);
    cursor_ = 0;
    report_ = EpochReport{};
    report_.epoch = epoch;
}

std::optional<ImageTensor> BatchLoader::fetch(std::size_t index) {
    if (options_.cache) {
        if (auto it = cache_.find(index); it != cache_.end()) return it->second;
    }
    auto img = load_image(dataset_.items()[index].path, options_.resolution);
    if (options_.cache) cache_.emplace(index, img);
    return img;
}

std::optional<Batch> BatchLoader::next() {
    while (cursor_ < order_.size()) {
        const std::size_t end = std::min(order_.size(), cursor_ + options_.batch_size);
        Batch batch;
        std::vector<ImageTensor> images;
        for (; cursor_ < end; ++cursor_) {
            const auto index = order_[cursor_];
            auto img = fetch(index);
            if (!img) {
                report_.skipped.push_back(dataset_.items()[index].path.string());
                continue;
            }
            images.push_back(std::move(*img));
            batch.labels.push_back(dataset_.items()[index].label);
            batch.indices.push_back(index);
        }
        if (images.empty()) continue;
        batch.images = ImageTensor::stack(images);
        report_.delivered += images.size();
        return batch;
    }
    return std::nullopt;
}

}  // namespace cipher::dataio

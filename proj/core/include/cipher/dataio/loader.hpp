#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cipher/dataio/dataset.hpp"
#include "cipher/dataio/image.hpp"

namespace cipher::dataio {

struct Batch {
    ImageTensor images;
    std::vector<int> labels;
    std::vector<std::size_t> indices;  // positions in the dataset
};

struct EpochReport {
    std::int64_t epoch = 0;
    std::size_t delivered = 0;
    std::vector<std::string> skipped;  // files that failed to load
};

struct LoaderOptions {
    std::size_t batch_size = 32;
    bool shuffle = true;
    std::uint64_t seed = 42;
    int resolution = 64;
    bool cache = true;  // keep decoded tensors in memory across epochs
};

// Visits every dataset item once per epoch. The order depends only on (seed, epoch).
class BatchLoader {
public:
    BatchLoader(LabeledDataset dataset, LoaderOptions options);

    void start_epoch(std::int64_t epoch);
    std::optional<Batch> next();
    const EpochReport& report() const { return report_; }
    const LabeledDataset& dataset() const { return dataset_; }

    static std::vector<std::size_t> epoch_order(std::size_t n, bool shuffle, std::uint64_t seed, std::int64_t epoch);

private:
    std::optional<ImageTensor> fetch(std::size_t index);

    LabeledDataset dataset_;
    LoaderOptions options_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    EpochReport report_;
    std::map<std::size_t, std::optional<ImageTensor>> cache_;
};

}  // namespace cipher::dataio

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cipher::dataio {

enum class Split { Train, Val, Test };

const char* split_name(Split s);
Split parse_split(const std::string& s);

inline constexpr int kRealLabel = 0;
inline constexpr int kFakeLabel = 1;

struct DatasetItem {
    std::filesystem::path path;  // absolute, normalized
    int label = kRealLabel;
    Split split = Split::Train;

    bool operator==(const DatasetItem&) const = default;
};

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;

    void validate() const;
};

class LabeledDataset {
public:
    LabeledDataset() = default;
    explicit LabeledDataset(std::vector<DatasetItem> items);

    const std::vector<DatasetItem>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }
    std::size_t count_label(int label) const;
    std::size_t count_split(Split split) const;
    bool balanced() const { return count_label(kRealLabel) == count_label(kFakeLabel); }

    LabeledDataset subset(Split split) const;

private:
    std::vector<DatasetItem> items_;
};

// Regular files with a .png/.jpg/.jpeg extension, sorted by filename.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

// Takes the first n_per_class images of each directory in sorted order, then assigns
// train/val/test per class with a seeded shuffle. Item order is deterministic.
LabeledDataset build_balanced_dataset(const std::filesystem::path& real_dir, const std::filesystem::path& fake_dir,
                                      std::size_t n_per_class, const SplitFractions& fractions, std::uint64_t seed);

// One "path<TAB>label<TAB>split" line per item; paths are written relative to the
// manifest's directory so relocated run trees produce identical bytes.
std::string manifest_text(const LabeledDataset& dataset, const std::filesystem::path& manifest_dir);
void write_manifest(const LabeledDataset& dataset, const std::filesystem::path& path);
LabeledDataset read_manifest(const std::filesystem::path& path);

}  // namespace cipher::dataio

#include "cipher/dataio/dataset.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "cipher/error.hpp"

namespace cipher::dataio {

namespace fs = std::filesystem;

const char* split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "train";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    throw DataError("unknown split '" + s + "'");
}

void SplitFractions::validate() const {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9) {
        throw ConfigError("split fractions must be nonnegative and sum to 1");
    }
}

LabeledDataset::LabeledDataset(std::vector<DatasetItem> items) : items_(std::move(items)) {
    for (const auto& it : items_) {
        if (it.label != kRealLabel && it.label != kFakeLabel) {
            throw DataError("label must be 0 (real) or 1 (fake), got " + std::to_string(it.label));
        }
    }
}

std::size_t LabeledDataset::count_label(int label) const {
    return static_cast<std::size_t>(
        std::count_if(items_.begin(), items_.end(), [label](const DatasetItem& i) { return i.label == label; }));
}

std::size_t LabeledDataset::count_split(Split split) const {
    return static_cast<std::size_t>(
        std::count_if(items_.begin(), items_.end(), [split](const DatasetItem& i) { return i.split == split; }));
}

LabeledDataset LabeledDataset::subset(Split split) const {
    std::vector<DatasetItem> out;
    std::copy_if(items_.begin(), items_.end(), std::back_inserter(out),
                 [split](const DatasetItem& i) { return i.split == split; });
    return LabeledDataset(std::move(out));
}

std::vector<fs::path> list_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("image directory does not exist: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        auto ext = entry.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") out.push_back(fs::absolute(entry.path()).lexically_normal());
    }
    std::sort(out.begin(), out.end());
    return out;
}

LabeledDataset build_balanced_dataset(const fs::path& real_dir, const fs::path& fake_dir, std::size_t n_per_class,
                                      const SplitFractions& fractions, std::uint64_t seed) {
    fractions.validate();
    const auto real = list_images(real_dir);
    const auto fake = list_images(fake_dir);
    if (real.size() < n_per_class || fake.size() < n_per_class) {
        std::ostringstream msg;
        msg << "insufficient images for " << n_per_class << " per class:";
        if (real.size() < n_per_class) msg << " real class has " << real.size() << " in " << real_dir.string() << ";";
        if (fake.size() < n_per_class) msg << " fake class has " << fake.size() << " in " << fake_dir.string() << ";";
        throw DataError(msg.str());
    }
    if (n_per_class == 0) spdlog::warn("balanced dataset requested with 0 images per class; result is empty");

    const auto n_train = static_cast<std::size_t>(std::floor(fractions.train * static_cast<double>(n_per_class)));
    const auto n_val = static_cast<std::size_t>(std::floor(fractions.val * static_cast<double>(n_per_class)));

    std::vector<DatasetItem> items;
    items.reserve(2 * n_per_class);
    std::mt19937_64 rng(seed);
    for (const auto& [files, label] : {std::pair{&real, kRealLabel}, std::pair{&fake, kFakeLabel}}) {
        std::vector<fs::path> chosen(files->begin(), files->begin() + static_cast<std::ptrdiff_t>(n_per_class));
        std::shuffle(chosen.begin(), chosen.end(), rng);
        for (std::size_t i = 0; i < chosen.size(); ++i) {
            const Split split = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
            items.push_back({chosen[i], label, split});
        }
    }
    return LabeledDataset(std::move(items));
}

std::string manifest_text(const LabeledDataset& dataset, const fs::path& manifest_dir) {
    const auto base = fs::absolute(manifest_dir).lexically_normal();
    std::string out;
    for (const auto& item : dataset.items()) {
        auto rel = item.path.lexically_relative(base);
        if (rel.empty()) rel = item.path;
        out += rel.generic_string() + '\t' + std::to_string(item.label) + '\t' + split_name(item.split) + '\n';
    }
    return out;
}

void write_manifest(const LabeledDataset& dataset, const fs::path& path) {
    const auto dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
    fs::create_directories(dir);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << manifest_text(dataset, dir);
}

LabeledDataset read_manifest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read manifest " + path.string());
    const auto base = fs::absolute(path.has_parent_path() ? path.parent_path() : fs::path(".")).lexically_normal();
    std::vector<DatasetItem> items;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string p, label, split;
        if (!std::getline(ss, p, '\t') || !std::getline(ss, label, '\t') || !std::getline(ss, split, '\t')) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected path<TAB>label<TAB>split");
        }
        fs::path item_path(p);
        if (item_path.is_relative()) item_path = base / item_path;
        if (label != "0" && label != "1") {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": label must be 0 or 1");
        }
        items.push_back({item_path.lexically_normal(), label == "1" ? kFakeLabel : kRealLabel, parse_split(split)});
    }
    return LabeledDataset(std::move(items));
}

}  // namespace cipher::dataio

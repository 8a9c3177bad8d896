#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cipher/nn/parameters.hpp"

namespace cipher::nn {

// Binary container: magic, kind, architecture hash, sorted metadata, then named
// tensors in insertion order. Doubles are stored little-endian, so a
// save -> load -> save cycle reproduces the file byte for byte.
struct Checkpoint {
    std::string kind;
    std::string arch_hash;
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& tensor(const std::string& name) const;
    bool has_tensor(const std::string& name) const;
    const std::string& meta_at(const std::string& key) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

// Serializes only the tensors section; equal output means equal weights.
std::string serialize_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Throws CheckpointError when kind or architecture hash differ from expectations.
void expect_compatible(const Checkpoint& ckpt, const std::string& kind, const std::string& arch_hash);

std::vector<std::pair<std::string, Tensor>> snapshot(const ParameterList& params, const std::string& prefix = "");

// Copies values into params by name; shapes must match and every param must be present.
void restore(const ParameterList& params, const Checkpoint& ckpt, const std::string& prefix = "");

}  // namespace cipher::nn

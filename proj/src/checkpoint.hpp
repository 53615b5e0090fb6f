#pragma once

#include <string>

#include "models.hpp"

namespace spnn::ckpt {

// Checkpoint layout:
//   "SPNN" | u32 LE version (=1) | u64 LE header length | UTF-8 JSON header
//   | each parameter tensor as raw LE f64 (manifest order)
//   | each mask as one byte per element (0/1)
// The header carries the model spec, the training seed, the dtype tag and
// the tensor manifest in declaration order. Bayesian rho tensors follow
// their mean tensor in the manifest and share its mask.
struct Checkpoint {
    nn::Model model;
    uint64_t seed = 0;
};

std::vector<uint8_t> encode(const nn::Model& model, uint64_t seed);
Checkpoint decode(const std::vector<uint8_t>& bytes);

void write_file(const std::string& path, const nn::Model& model, uint64_t seed);
Checkpoint read_file(const std::string& path);

// Exact byte size a checkpoint for this model occupies.
size_t encoded_size(const nn::Model& model, uint64_t seed);

}  // namespace spnn::ckpt

#pragma once

#include <cstdint>
#include <set>
#include <string>

#include "tensor.hpp"

namespace spnn::data {

struct Dataset {
    Tensor inputs;               // [N, ...]
    std::vector<size_t> labels;  // empty for unlabeled sets
    double lo = 0.0;             // declared value range
    double hi = 1.0;

    size_t size() const { return inputs.rank() == 0 ? 0 : inputs.dim(0); }
    bool labeled() const { return !labels.empty(); }

    // Rows [start, start+count); count clipped to the end.
    Tensor batch(size_t start, size_t count) const;
    Tensor rows(const std::vector<size_t>& indices) const;
    std::vector<size_t> label_slice(size_t start, size_t count) const;

    // Same data with a different per-sample shape (e.g. [784] <-> [1,28,28]).
    Dataset with_sample_shape(const Shape& sample_shape) const;
};

// ---- IDX binary format ----
// Two zero bytes, a type byte, a dimension-count byte, big-endian u32 dims,
// then the payload.

// Unsigned-byte payloads are rescaled to [0,1] by division by 255; float
// payloads are taken verbatim.
Tensor parse_idx(const std::vector<uint8_t>& bytes);
// No rescaling (used for label files).
Tensor parse_idx_raw(const std::vector<uint8_t>& bytes);

enum class IdxType : uint8_t { ubyte = 0x08, f32 = 0x0D, f64 = 0x0E };

std::vector<uint8_t> write_idx(const Tensor& t, IdxType type);

Tensor read_idx_file(const std::string& path);
Tensor read_idx_file_raw(const std::string& path);
void write_idx_file(const std::string& path, const Tensor& t, IdxType type);

std::vector<size_t> read_idx_labels(const std::string& path);
void write_idx_labels(const std::string& path, const std::vector<size_t>& labels);

// ---- synthetic datasets ----

// Gaussian clusters with unit noise; class means sit on a regular simplex
// with pairwise distance `separation` (random directions when dims < classes).
Dataset synth_blobs(size_t n, size_t classes, size_t dims, double separation, uint64_t seed);

struct ImageOpts {
    size_t height = 28;
    size_t width = 28;
    double contrast = 0.16;   // template amplitude around 0.5
    double noise = 0.22;      // per-pixel gaussian noise
    size_t max_shift = 2;     // random integer translation
    size_t grid = 7;          // coarse template grid
};

// Class-template images in [0,1]: low-frequency random template per class,
// shifted and noised per sample. Written/read losslessly as ubyte IDX after
// 1/255 quantization.
Dataset synth_images(size_t n, size_t classes, uint64_t seed, const ImageOpts& opts = {});

// Quantize to the 1/255 grid that a ubyte IDX round trip would produce.
Dataset quantize_u8(const Dataset& ds);

// ---- anomaly families ----

Dataset make_oodom(const Dataset& ds, double scale = 255.0);

enum class CorruptionKind { gaussian_noise, impulse_noise, blur_boxfilter, contrast, brightness };

struct CorruptionSpec {
    CorruptionKind kind;
    int severity = 1;  // 1..5
};

CorruptionKind corruption_kind_from_name(const std::string& name);
const char* corruption_kind_name(CorruptionKind kind);

// Severity tables (index 0 = severity 1):
//   gaussian_noise sigma  {0.04, 0.08, 0.12, 0.18, 0.26}
//   impulse_noise  prob   {0.01, 0.03, 0.06, 0.10, 0.17}
//   blur_boxfilter passes {1, 2, 3, 4, 5} of a 3x3 box filter
//   contrast       alpha  {0.75, 0.60, 0.45, 0.30, 0.15}
//   brightness     delta  {0.08, 0.16, 0.24, 0.32, 0.40}
Dataset corrupt(const Dataset& ds, const CorruptionSpec& spec, uint64_t seed);

struct OodSplit {
    Dataset in_distribution;  // labels re-indexed densely
    Dataset ood;              // unlabeled
    std::vector<size_t> kept_classes;
};

OodSplit split_ood(const Dataset& ds, const std::set<size_t>& holdout_classes);

}  // namespace spnn::data

#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace spnn::data {

Tensor Dataset::batch(size_t start, size_t count) const {
    size_t n = size();
    if (start >= n) throw Error::invalid_arg("Dataset::batch: start beyond dataset");
    count = std::min(count, n - start);
    size_t stride = inputs.numel() / n;
    Shape shape = inputs.shape();
    shape[0] = count;
    Tensor out(shape);
    std::memcpy(out.data(), inputs.data() + start * stride, count * stride * sizeof(double));
    return out;
}

Tensor Dataset::rows(const std::vector<size_t>& indices) const {
    size_t n = size();
    size_t stride = inputs.numel() / n;
    Shape shape = inputs.shape();
    shape[0] = indices.size();
    Tensor out(shape);
    for (size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= n) throw Error::invalid_arg("Dataset::rows: index out of range");
        std::memcpy(out.data() + i * stride, inputs.data() + indices[i] * stride,
                    stride * sizeof(double));
    }
    return out;
}

std::vector<size_t> Dataset::label_slice(size_t start, size_t count) const {
    if (!labeled()) throw Error::state("Dataset::label_slice: dataset is unlabeled");
    count = std::min(count, labels.size() - start);
    return {labels.begin() + static_cast<long>(start),
            labels.begin() + static_cast<long>(start + count)};
}

Dataset Dataset::with_sample_shape(const Shape& sample_shape) const {
    Shape full = sample_shape;
    full.insert(full.begin(), size());
    Dataset out = *this;
    out.inputs = inputs.reshaped(full);
    return out;
}

// ---- IDX ----

namespace {

uint32_t read_be32(const uint8_t* p) {
    return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
           (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void write_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

Tensor parse_idx_impl(const std::vector<uint8_t>& bytes, bool rescale_ubyte) {
    if (bytes.size() < 4)
        throw Error::format("idx: truncated header, only " + std::to_string(bytes.size()) +
                            " bytes (need 4)");
    if (bytes[0] != 0 || bytes[1] != 0)
        throw Error::format("idx: bad magic at offset 0, expected two zero bytes, got " +
                            std::to_string(bytes[0]) + "," + std::to_string(bytes[1]));
    uint8_t type = bytes[2];
    uint8_t ndim = bytes[3];
    size_t elem_size;
    switch (type) {
        case 0x08: elem_size = 1; break;
        case 0x0D: elem_size = 4; break;
        case 0x0E: elem_size = 8; break;
        default:
            throw Error::format("idx: unsupported type byte 0x" + [type] {
                char buf[8];
                std::snprintf(buf, sizeof buf, "%02X", type);
                return std::string(buf);
            }() + " at offset 2");
    }
    size_t off = 4;
    if (bytes.size() < off + 4ul * ndim)
        throw Error::format("idx: truncated dimension list at offset " + std::to_string(bytes.size()));
    Shape shape(ndim);
    size_t numel = 1;
    for (size_t d = 0; d < ndim; ++d) {
        shape[d] = read_be32(bytes.data() + off);
        off += 4;
        numel *= shape[d];
    }
    if (bytes.size() < off + numel * elem_size)
        throw Error::format("idx: truncated payload at offset " + std::to_string(bytes.size()) +
                            ", expected " + std::to_string(off + numel * elem_size) + " bytes");
    if (bytes.size() > off + numel * elem_size)
        throw Error::format("idx: trailing bytes at offset " +
                            std::to_string(off + numel * elem_size));
    Tensor t(shape);
    const uint8_t* p = bytes.data() + off;
    switch (type) {
        case 0x08: {
            double s = rescale_ubyte ? 1.0 / 255.0 : 1.0;
            for (size_t i = 0; i < numel; ++i) t[i] = s * static_cast<double>(p[i]);
            break;
        }
        case 0x0D:
            for (size_t i = 0; i < numel; ++i) {
                uint32_t u = read_be32(p + 4 * i);
                float f;
                std::memcpy(&f, &u, 4);
                t[i] = static_cast<double>(f);
            }
            break;
        case 0x0E:
            for (size_t i = 0; i < numel; ++i) {
                uint64_t u = 0;
                for (int b = 0; b < 8; ++b) u = (u << 8) | p[8 * i + b];
                double d;
                std::memcpy(&d, &u, 8);
                t[i] = d;
            }
            break;
    }
    return t;
}

}  // namespace

Tensor parse_idx(const std::vector<uint8_t>& bytes) { return parse_idx_impl(bytes, true); }
Tensor parse_idx_raw(const std::vector<uint8_t>& bytes) { return parse_idx_impl(bytes, false); }

std::vector<uint8_t> write_idx(const Tensor& t, IdxType type) {
    if (t.rank() > 255) throw Error::invalid_arg("idx: rank exceeds format limit");
    std::vector<uint8_t> out;
    out.push_back(0);
    out.push_back(0);
    out.push_back(static_cast<uint8_t>(type));
    out.push_back(static_cast<uint8_t>(t.rank()));
    for (size_t d : t.shape()) {
        if (d > UINT32_MAX) throw Error::invalid_arg("idx: dimension exceeds u32");
        write_be32(out, static_cast<uint32_t>(d));
    }
    switch (type) {
        case IdxType::ubyte:
            for (size_t i = 0; i < t.numel(); ++i) {
                double v = std::min(1.0, std::max(0.0, t[i]));
                out.push_back(static_cast<uint8_t>(std::lround(v * 255.0)));
            }
            break;
        case IdxType::f32:
            for (size_t i = 0; i < t.numel(); ++i) {
                float f = static_cast<float>(t[i]);
                uint32_t u;
                std::memcpy(&u, &f, 4);
                write_be32(out, u);
            }
            break;
        case IdxType::f64:
            for (size_t i = 0; i < t.numel(); ++i) {
                uint64_t u;
                double d = t[i];
                std::memcpy(&u, &d, 8);
                for (int b = 7; b >= 0; --b) out.push_back(static_cast<uint8_t>(u >> (8 * b)));
            }
            break;
    }
    return out;
}

namespace {

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error::io("cannot open " + path);
    f.seekg(0, std::ios::end);
    std::streamoff len = f.tellg();
    f.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(len));
    f.read(reinterpret_cast<char*>(bytes.data()), len);
    if (!f) throw Error::io("short read on " + path);
    return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error::io("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error::io("short write on " + path);
}

}  // namespace

Tensor read_idx_file(const std::string& path) { return parse_idx(read_file(path)); }
Tensor read_idx_file_raw(const std::string& path) { return parse_idx_raw(read_file(path)); }

void write_idx_file(const std::string& path, const Tensor& t, IdxType type) {
    write_file(path, write_idx(t, type));
}

std::vector<size_t> read_idx_labels(const std::string& path) {
    Tensor t = read_idx_file_raw(path);
    if (t.rank() != 1) throw Error::format("idx labels: expected rank-1 file, got " + shape_str(t.shape()));
    std::vector<size_t> labels(t.numel());
    for (size_t i = 0; i < t.numel(); ++i) {
        if (t[i] < 0.0) throw Error::format("idx labels: negative label");
        labels[i] = static_cast<size_t>(t[i]);
    }
    return labels;
}

void write_idx_labels(const std::string& path, const std::vector<size_t>& labels) {
    Tensor t({labels.size()});
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] > 255) throw Error::invalid_arg("idx labels: label exceeds ubyte range");
        t[i] = static_cast<double>(labels[i]) / 255.0;  // write_idx ubyte multiplies back
    }
    write_idx_file(path, t, IdxType::ubyte);
}

// ---- synthetic datasets ----

Dataset synth_blobs(size_t n, size_t classes, size_t dims, double separation, uint64_t seed) {
    if (classes < 2) throw Error::invalid_arg("synth_blobs: need at least 2 classes");
    if (dims == 0 || n == 0) throw Error::invalid_arg("synth_blobs: empty dims or n");
    Rng rng(seed);

    // Class means with pairwise distance == separation: scaled standard-basis
    // simplex when it fits, random sphere directions otherwise.
    std::vector<Tensor> means;
    double r = separation / std::sqrt(2.0);
    for (size_t c = 0; c < classes; ++c) {
        Tensor m({dims});
        if (dims >= classes) {
            m[c] = r;
        } else {
            Tensor dir = Tensor::normal({dims}, rng);
            double norm = std::max(dir.l2_norm(), 1e-12);
            for (size_t d = 0; d < dims; ++d) m[d] = r * dir[d] / norm;
        }
        means.push_back(std::move(m));
    }

    Dataset ds;
    ds.inputs = Tensor({n, dims});
    ds.labels.resize(n);
    for (size_t i = 0; i < n; ++i) {
        size_t c = i % classes;
        ds.labels[i] = c;
        for (size_t d = 0; d < dims; ++d)
            ds.inputs[i * dims + d] = means[c][d] + rng.normal();
    }
    ds.lo = ds.inputs.min();
    ds.hi = ds.inputs.max();
    return ds;
}

namespace {

// Bilinear upsample of a coarse grid to (h, w).
Tensor upsample(const Tensor& grid, size_t h, size_t w) {
    size_t gh = grid.dim(0), gw = grid.dim(1);
    Tensor out({h, w});
    for (size_t y = 0; y < h; ++y) {
        double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(h) * static_cast<double>(gh) - 0.5;
        double cy = std::min(std::max(fy, 0.0), static_cast<double>(gh - 1));
        size_t y0 = static_cast<size_t>(cy);
        size_t y1 = std::min(y0 + 1, gh - 1);
        double ty = cy - static_cast<double>(y0);
        for (size_t x = 0; x < w; ++x) {
            double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(w) * static_cast<double>(gw) - 0.5;
            double cx = std::min(std::max(fx, 0.0), static_cast<double>(gw - 1));
            size_t x0 = static_cast<size_t>(cx);
            size_t x1 = std::min(x0 + 1, gw - 1);
            double tx = cx - static_cast<double>(x0);
            double v00 = grid[y0 * gw + x0], v01 = grid[y0 * gw + x1];
            double v10 = grid[y1 * gw + x0], v11 = grid[y1 * gw + x1];
            out[y * w + x] = (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
        }
    }
    return out;
}

}  // namespace

Dataset synth_images(size_t n, size_t classes, uint64_t seed, const ImageOpts& opts) {
    if (classes < 2) throw Error::invalid_arg("synth_images: need at least 2 classes");
    Rng rng(seed);
    size_t h = opts.height, w = opts.width;

    std::vector<Tensor> templates;
    for (size_t c = 0; c < classes; ++c) {
        Tensor grid({opts.grid, opts.grid});
        for (size_t i = 0; i < grid.numel(); ++i)
            grid[i] = 0.5 + opts.contrast * rng.uniform(-1.0, 1.0);
        templates.push_back(upsample(grid, h, w));
    }

    Dataset ds;
    ds.inputs = Tensor({n, h, w});
    ds.labels.resize(n);
    long ms = static_cast<long>(opts.max_shift);
    for (size_t i = 0; i < n; ++i) {
        size_t c = i % classes;
        ds.labels[i] = c;
        long dy = ms == 0 ? 0 : static_cast<long>(rng.integer(2 * static_cast<uint64_t>(ms) + 1)) - ms;
        long dx = ms == 0 ? 0 : static_cast<long>(rng.integer(2 * static_cast<uint64_t>(ms) + 1)) - ms;
        const Tensor& tpl = templates[c];
        double* row = ds.inputs.data() + i * h * w;
        for (size_t y = 0; y < h; ++y) {
            for (size_t x = 0; x < w; ++x) {
                long sy = std::min(std::max(static_cast<long>(y) + dy, 0L), static_cast<long>(h) - 1);
                long sx = std::min(std::max(static_cast<long>(x) + dx, 0L), static_cast<long>(w) - 1);
                double v = tpl[static_cast<size_t>(sy) * w + static_cast<size_t>(sx)] +
                           opts.noise * rng.normal();
                row[y * w + x] = std::min(1.0, std::max(0.0, v));
            }
        }
    }
    ds.lo = 0.0;
    ds.hi = 1.0;
    return ds;
}

Dataset quantize_u8(const Dataset& ds) {
    Dataset out = ds;
    out.inputs.map_([](double v) {
        double c = std::min(1.0, std::max(0.0, v));
        return static_cast<double>(std::lround(c * 255.0)) / 255.0;
    });
    return out;
}

// ---- anomaly families ----

Dataset make_oodom(const Dataset& ds, double scale) {
    if (ds.lo < 0.0 || ds.hi > 1.0)
        throw Error::invalid_arg("make_oodom: dataset must be in [0,1], declared range [" +
                                 std::to_string(ds.lo) + "," + std::to_string(ds.hi) + "]");
    Dataset out = ds;
    out.inputs.scale_(scale);
    out.lo = ds.lo * scale;
    out.hi = ds.hi * scale;
    return out;
}

CorruptionKind corruption_kind_from_name(const std::string& name) {
    if (name == "gaussian_noise") return CorruptionKind::gaussian_noise;
    if (name == "impulse_noise") return CorruptionKind::impulse_noise;
    if (name == "blur_boxfilter") return CorruptionKind::blur_boxfilter;
    if (name == "contrast") return CorruptionKind::contrast;
    if (name == "brightness") return CorruptionKind::brightness;
    throw Error::invalid_arg("unknown corruption kind: " + name);
}

const char* corruption_kind_name(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::gaussian_noise: return "gaussian_noise";
        case CorruptionKind::impulse_noise: return "impulse_noise";
        case CorruptionKind::blur_boxfilter: return "blur_boxfilter";
        case CorruptionKind::contrast: return "contrast";
        case CorruptionKind::brightness: return "brightness";
    }
    return "?";
}

namespace {

// One pass of a 3x3 box filter with border renormalization on [h,w] planes.
void box_blur_pass(double* img, size_t h, size_t w, std::vector<double>& scratch) {
    scratch.assign(h * w, 0.0);
    for (size_t y = 0; y < h; ++y) {
        for (size_t x = 0; x < w; ++x) {
            double s = 0.0;
            int cnt = 0;
            for (long dy = -1; dy <= 1; ++dy) {
                long yy = static_cast<long>(y) + dy;
                if (yy < 0 || yy >= static_cast<long>(h)) continue;
                for (long dx = -1; dx <= 1; ++dx) {
                    long xx = static_cast<long>(x) + dx;
                    if (xx < 0 || xx >= static_cast<long>(w)) continue;
                    s += img[static_cast<size_t>(yy) * w + static_cast<size_t>(xx)];
                    ++cnt;
                }
            }
            scratch[y * w + x] = s / cnt;
        }
    }
    std::memcpy(img, scratch.data(), h * w * sizeof(double));
}

}  // namespace

Dataset corrupt(const Dataset& ds, const CorruptionSpec& spec, uint64_t seed) {
    if (ds.lo < 0.0 || ds.hi > 1.0)
        throw Error::invalid_arg("corrupt: dataset must be in [0,1]");
    if (spec.severity < 1 || spec.severity > 5)
        throw Error::invalid_arg("corrupt: severity must be in 1..5");
    size_t sev = static_cast<size_t>(spec.severity - 1);

    static const double kGaussSigma[5] = {0.04, 0.08, 0.12, 0.18, 0.26};
    static const double kImpulseProb[5] = {0.01, 0.03, 0.06, 0.10, 0.17};
    static const int kBlurPasses[5] = {1, 2, 3, 4, 5};
    static const double kContrastAlpha[5] = {0.75, 0.60, 0.45, 0.30, 0.15};
    static const double kBrightnessDelta[5] = {0.08, 0.16, 0.24, 0.32, 0.40};

    Rng rng(seed);
    Dataset out = ds;
    Tensor& x = out.inputs;
    switch (spec.kind) {
        case CorruptionKind::gaussian_noise: {
            double s = kGaussSigma[sev];
            for (size_t i = 0; i < x.numel(); ++i) x[i] += s * rng.normal();
            break;
        }
        case CorruptionKind::impulse_noise: {
            double p = kImpulseProb[sev];
            for (size_t i = 0; i < x.numel(); ++i) {
                if (rng.uniform() < p) x[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
            }
            break;
        }
        case CorruptionKind::blur_boxfilter: {
            if (x.rank() != 3 && x.rank() != 4)
                throw Error::invalid_arg("corrupt: blur needs [N,H,W] or [N,C,H,W] inputs, got " +
                                         shape_str(x.shape()));
            size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
            size_t planes = x.numel() / (h * w);
            std::vector<double> scratch;
            for (size_t pl = 0; pl < planes; ++pl)
                for (int pass = 0; pass < kBlurPasses[sev]; ++pass)
                    box_blur_pass(x.data() + pl * h * w, h, w, scratch);
            break;
        }
        case CorruptionKind::contrast: {
            double a = kContrastAlpha[sev];
            size_t n = ds.size();
            size_t stride = x.numel() / n;
            for (size_t i = 0; i < n; ++i) {
                double* row = x.data() + i * stride;
                double m = 0.0;
                for (size_t j = 0; j < stride; ++j) m += row[j];
                m /= static_cast<double>(stride);
                for (size_t j = 0; j < stride; ++j) row[j] = m + a * (row[j] - m);
            }
            break;
        }
        case CorruptionKind::brightness: {
            double d = kBrightnessDelta[sev];
            x.shift_(d);
            break;
        }
    }
    x.clamp_(0.0, 1.0);
    out.lo = 0.0;
    out.hi = 1.0;
    return out;
}

OodSplit split_ood(const Dataset& ds, const std::set<size_t>& holdout_classes) {
    if (!ds.labeled()) throw Error::state("split_ood: dataset has no labels");
    if (holdout_classes.empty()) throw Error::invalid_arg("split_ood: empty holdout set");

    std::set<size_t> present(ds.labels.begin(), ds.labels.end());
    std::vector<size_t> kept;
    for (size_t c : present)
        if (!holdout_classes.count(c)) kept.push_back(c);
    if (kept.empty()) throw Error::invalid_arg("split_ood: holdout covers every class");

    std::vector<size_t> remap(*present.rbegin() + 1, SIZE_MAX);
    for (size_t i = 0; i < kept.size(); ++i) remap[kept[i]] = i;

    std::vector<size_t> in_idx, ood_idx;
    for (size_t i = 0; i < ds.labels.size(); ++i) {
        if (holdout_classes.count(ds.labels[i]))
            ood_idx.push_back(i);
        else
            in_idx.push_back(i);
    }

    OodSplit split;
    split.kept_classes = kept;
    split.in_distribution.inputs = ds.rows(in_idx);
    split.in_distribution.lo = ds.lo;
    split.in_distribution.hi = ds.hi;
    split.in_distribution.labels.reserve(in_idx.size());
    for (size_t i : in_idx) split.in_distribution.labels.push_back(remap[ds.labels[i]]);
    split.ood.inputs = ds.rows(ood_idx);
    split.ood.lo = ds.lo;
    split.ood.hi = ds.hi;
    return split;
}

}  // namespace spnn::data

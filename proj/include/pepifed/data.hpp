#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pepifed/rng.hpp"
#include "pepifed/tensor.hpp"

namespace pepifed::data {

struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConsistencyError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Dataset {
    int h = 0, w = 0;
    int classes = 0;
    std::vector<float> images;  // n * h * w, pixel values scaled to [0, 1] for real data
    std::vector<int> labels;

    int size() const { return static_cast<int>(labels.size()); }
    int pixels() const { return h * w; }
    std::span<const float> image(int i) const {
        return {images.data() + static_cast<size_t>(i) * pixels(), static_cast<size_t>(pixels())};
    }
};

// IDX pair: big-endian magic 2051/2049, big-endian u32 dims, u8 payload.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// writers used by tests and gen-data to produce IDX fixtures
void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

// Random permutation under `seed`, then a contiguous split into pairwise
// disjoint parts whose sizes differ by at most one (earlier parts larger).
std::vector<Dataset> partition_disjoint(const Dataset& ds, int n_parts, std::uint64_t seed);

struct NoiseSpec {
    double snr_db = -10.0;
};

// Adds zero-mean Gaussian noise with variance P * 10^(-snr_db/10) where P is
// the per-image mean-square pixel value. Output is intentionally not clipped;
// an all-zero image (P = 0) passes through unchanged.
void add_awgn(std::span<float> image, const NoiseSpec& spec, Rng& rng);

struct MultiViewSample {
    int k = 0;
    int label = 0;
    std::vector<float> views;  // k * h * w, view 0 is the local view

    std::span<const float> view(int v, int pixels) const {
        return {views.data() + static_cast<size_t>(v) * pixels, static_cast<size_t>(pixels)};
    }
};

struct MultiViewSet {
    int h = 0, w = 0, k = 0;
    int classes = 0;
    std::vector<MultiViewSample> samples;

    int size() const { return static_cast<int>(samples.size()); }
};

// Expands every sample into k independently-noised views of the same image.
// View v of sample i is identical for any k' >= v+1 under the same seed, so
// methods that consume fewer views see a prefix of the same realizations.
MultiViewSet make_multiview(const Dataset& ds, int k, const NoiseSpec& spec, std::uint64_t seed);

// First `k` views of every sample, bit-identical to the source (and, by the
// prefix property above, to make_multiview called with k directly).
MultiViewSet slice_views(const MultiViewSet& set, int k);

// Isotropic Gaussian blobs around class means with exact pairwise distance
// `separation`, reshaped to square dim^(1/2) pseudo-images. dim must be a
// perfect square and >= classes.
Dataset synth_blobs(int classes, int dim, double separation, double noise_sigma, int n, std::uint64_t seed);

// binary cache (little-endian, magic "PEPD")
void save_multiview(const MultiViewSet& set, const std::string& path);
MultiViewSet load_multiview(const std::string& path);

}  // namespace pepifed::data

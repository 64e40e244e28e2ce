#include "pepifed/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace pepifed::data {

namespace {

constexpr std::uint32_t kImagesMagic = 2051;
constexpr std::uint32_t kLabelsMagic = 2049;

std::uint32_t read_be32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError(std::string("idx: truncated while reading ") + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw FormatError("idx: cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw FormatError("idx: cannot open " + labels_path);

    if (read_be32(img, "image magic") != kImagesMagic) throw FormatError("idx: bad image magic in " + images_path);
    const std::uint32_t n = read_be32(img, "image count");
    const std::uint32_t h = read_be32(img, "rows");
    const std::uint32_t w = read_be32(img, "cols");

    if (read_be32(lab, "label magic") != kLabelsMagic) throw FormatError("idx: bad label magic in " + labels_path);
    const std::uint32_t ln = read_be32(lab, "label count");
    if (ln != n) throw ConsistencyError("idx: image/label count mismatch");

    Dataset ds;
    ds.h = static_cast<int>(h);
    ds.w = static_cast<int>(w);
    const size_t pixels = static_cast<size_t>(n) * h * w;
    std::vector<unsigned char> raw(pixels);
    img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(pixels));
    if (!img) throw FormatError("idx: truncated image payload");
    ds.images.resize(pixels);
    for (size_t i = 0; i < pixels; ++i) ds.images[i] = static_cast<float>(raw[i]) / 255.0f;

    std::vector<unsigned char> lraw(n);
    lab.read(reinterpret_cast<char*>(lraw.data()), static_cast<std::streamsize>(n));
    if (!lab) throw FormatError("idx: truncated label payload");
    ds.labels.resize(n);
    int max_label = 0;
    for (std::uint32_t i = 0; i < n; ++i) {
        ds.labels[i] = static_cast<int>(lraw[i]);
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = max_label + 1;
    return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw FormatError("idx: cannot write " + images_path);
    write_be32(img, kImagesMagic);
    write_be32(img, static_cast<std::uint32_t>(ds.size()));
    write_be32(img, static_cast<std::uint32_t>(ds.h));
    write_be32(img, static_cast<std::uint32_t>(ds.w));
    for (float v : ds.images) {
        const float c = std::clamp(v, 0.0f, 1.0f);
        img.put(static_cast<char>(static_cast<unsigned char>(std::lround(c * 255.0f))));
    }
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw FormatError("idx: cannot write " + labels_path);
    write_be32(lab, kLabelsMagic);
    write_be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (int l : ds.labels) lab.put(static_cast<char>(static_cast<unsigned char>(l)));
}

std::vector<Dataset> partition_disjoint(const Dataset& ds, int n_parts, std::uint64_t seed) {
    if (n_parts < 1) throw std::invalid_argument("partition_disjoint: n_parts must be >= 1");
    if (n_parts > ds.size()) throw std::invalid_argument("partition_disjoint: more parts than samples");

    std::vector<int> order(static_cast<size_t>(ds.size()));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 0x70617274));  // "part"
    shuffle(order, rng);

    const int base = ds.size() / n_parts;
    const int rem = ds.size() % n_parts;
    std::vector<Dataset> parts(static_cast<size_t>(n_parts));
    size_t cursor = 0;
    for (int p = 0; p < n_parts; ++p) {
        const int count = base + (p < rem ? 1 : 0);
        Dataset& out = parts[static_cast<size_t>(p)];
        out.h = ds.h;
        out.w = ds.w;
        out.classes = ds.classes;
        out.images.reserve(static_cast<size_t>(count) * ds.pixels());
        out.labels.reserve(static_cast<size_t>(count));
        for (int i = 0; i < count; ++i) {
            const int src = order[cursor++];
            auto img = ds.image(src);
            out.images.insert(out.images.end(), img.begin(), img.end());
            out.labels.push_back(ds.labels[static_cast<size_t>(src)]);
        }
    }
    return parts;
}

void add_awgn(std::span<float> image, const NoiseSpec& spec, Rng& rng) {
    double power = 0.0;
    for (float v : image) power += static_cast<double>(v) * static_cast<double>(v);
    power /= static_cast<double>(image.size());
    if (power == 0.0) return;
    const double sigma = std::sqrt(power * std::pow(10.0, -spec.snr_db / 10.0));
    for (float& v : image) v = static_cast<float>(static_cast<double>(v) + sigma * rng.gaussian());
}

MultiViewSet make_multiview(const Dataset& ds, int k, const NoiseSpec& spec, std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("make_multiview: k must be >= 1");
    MultiViewSet set;
    set.h = ds.h;
    set.w = ds.w;
    set.k = k;
    set.classes = ds.classes;
    set.samples.resize(static_cast<size_t>(ds.size()));
    const int pixels = ds.pixels();
    for (int i = 0; i < ds.size(); ++i) {
        MultiViewSample& s = set.samples[static_cast<size_t>(i)];
        s.k = k;
        s.label = ds.labels[static_cast<size_t>(i)];
        s.views.resize(static_cast<size_t>(k) * pixels);
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        auto img = ds.image(i);
        for (int v = 0; v < k; ++v) {
            float* dst = s.views.data() + static_cast<size_t>(v) * pixels;
            std::copy(img.begin(), img.end(), dst);
            add_awgn({dst, static_cast<size_t>(pixels)}, spec, rng);
        }
    }
    return set;
}

MultiViewSet slice_views(const MultiViewSet& set, int k) {
    if (k < 1 || k > set.k) throw std::invalid_argument("slice_views: k out of range");
    if (k == set.k) return set;
    MultiViewSet out;
    out.h = set.h;
    out.w = set.w;
    out.k = k;
    out.classes = set.classes;
    out.samples.resize(set.samples.size());
    const size_t pixels = static_cast<size_t>(set.h) * set.w;
    for (size_t i = 0; i < set.samples.size(); ++i) {
        const MultiViewSample& src = set.samples[i];
        MultiViewSample& dst = out.samples[i];
        dst.k = k;
        dst.label = src.label;
        dst.views.assign(src.views.begin(), src.views.begin() + static_cast<size_t>(k) * pixels);
    }
    return out;
}

Dataset synth_blobs(int classes, int dim, double separation, double noise_sigma, int n, std::uint64_t seed) {
    if (classes < 2) throw std::invalid_argument("synth_blobs: classes must be >= 2");
    if (dim < classes) throw std::invalid_argument("synth_blobs: dim must be >= classes");
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(dim))));
    if (side * side != dim) throw std::invalid_argument("synth_blobs: dim must be a perfect square");

    // Class patterns live in a low-frequency 2-D cosine subspace so that a
    // convolution/pooling encoder keeps them intact (spatially white patterns
    // do not survive max-pooling under heavy view noise). Smallest frequency
    // grid with enough modes for the class count, never above the image side.
    int freq = 4;
    while (freq * freq - 1 < classes) ++freq;
    freq = std::min(freq, side);
    if (freq * freq - 1 < classes) throw std::invalid_argument("synth_blobs: too many classes for the image side");

    std::vector<std::vector<double>> modes;
    for (int fr = 0; fr < freq; ++fr)
        for (int fc = 0; fc < freq; ++fc) {
            if (fr == 0 && fc == 0) continue;  // skip the constant mode
            std::vector<double> g(static_cast<size_t>(dim));
            for (int r = 0; r < side; ++r)
                for (int c = 0; c < side; ++c)
                    g[static_cast<size_t>(r) * side + c] = std::cos(M_PI * fr * (r + 0.5) / side) *
                                                           std::cos(M_PI * fc * (c + 0.5) / side);
            modes.push_back(std::move(g));
        }

    // Class means: random combinations of the modes made orthonormal via
    // Gram-Schmidt, then scaled so every pair of means is exactly
    // `separation` apart.
    Rng mean_rng(derive_seed(seed, 0x6d65616e));  // "mean"
    std::vector<std::vector<double>> means(static_cast<size_t>(classes), std::vector<double>(static_cast<size_t>(dim)));
    for (auto& m : means) {
        for (const auto& g : modes) {
            const double coef = mean_rng.gaussian();
            for (int j = 0; j < dim; ++j) m[static_cast<size_t>(j)] += coef * g[static_cast<size_t>(j)];
        }
    }
    for (int c = 0; c < classes; ++c) {
        auto& m = means[static_cast<size_t>(c)];
        for (int prev = 0; prev < c; ++prev) {
            const auto& p = means[static_cast<size_t>(prev)];
            double dot = 0.0;
            for (int j = 0; j < dim; ++j) dot += m[static_cast<size_t>(j)] * p[static_cast<size_t>(j)];
            for (int j = 0; j < dim; ++j) m[static_cast<size_t>(j)] -= dot * p[static_cast<size_t>(j)];
        }
        double norm = 0.0;
        for (double v : m) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-9) throw NumericError("synth_blobs: degenerate mean direction");
        for (double& v : m) v /= norm;
    }
    // No DC offset: view noise is calibrated against image power, so a
    // constant background would only buy extra noise, not separation.
    const double scale = separation / std::sqrt(2.0);

    Dataset ds;
    ds.h = side;
    ds.w = side;
    ds.classes = classes;
    ds.images.resize(static_cast<size_t>(n) * dim);
    ds.labels.resize(static_cast<size_t>(n));
    Rng rng(derive_seed(seed, 0x626c6f62));  // "blob"
    for (int i = 0; i < n; ++i) {
        const int c = rng.uniform_int(classes);
        ds.labels[static_cast<size_t>(i)] = c;
        float* dst = ds.images.data() + static_cast<size_t>(i) * dim;
        const auto& m = means[static_cast<size_t>(c)];
        for (int j = 0; j < dim; ++j)
            dst[j] = static_cast<float>(scale * m[static_cast<size_t>(j)] + noise_sigma * rng.gaussian());
    }
    return ds;
}

// ---- multi-view binary cache ------------------------------------------------

namespace {

constexpr char kCacheMagic[4] = {'P', 'E', 'P', 'D'};
constexpr std::uint32_t kCacheVersion = 1;

void write_le32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_le32(std::istream& in, const char* what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw FormatError(std::string("multiview cache: truncated ") + what);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

void write_f32(std::ostream& out, float f) { write_le32(out, std::bit_cast<std::uint32_t>(f)); }

float read_f32(std::istream& in, const char* what) { return std::bit_cast<float>(read_le32(in, what)); }

}  // namespace

void save_multiview(const MultiViewSet& set, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("multiview cache: cannot write " + path);
    out.write(kCacheMagic, 4);
    write_le32(out, kCacheVersion);
    write_le32(out, static_cast<std::uint32_t>(set.h));
    write_le32(out, static_cast<std::uint32_t>(set.w));
    write_le32(out, static_cast<std::uint32_t>(set.k));
    write_le32(out, static_cast<std::uint32_t>(set.classes));
    write_le32(out, static_cast<std::uint32_t>(set.size()));
    for (const MultiViewSample& s : set.samples) {
        write_le32(out, static_cast<std::uint32_t>(s.label));
        for (float v : s.views) write_f32(out, v);
    }
}

MultiViewSet load_multiview(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("multiview cache: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCacheMagic, 4) != 0) throw FormatError("multiview cache: bad magic");
    if (read_le32(in, "version") != kCacheVersion) throw FormatError("multiview cache: unsupported version");
    MultiViewSet set;
    set.h = static_cast<int>(read_le32(in, "h"));
    set.w = static_cast<int>(read_le32(in, "w"));
    set.k = static_cast<int>(read_le32(in, "k"));
    set.classes = static_cast<int>(read_le32(in, "classes"));
    const std::uint32_t n = read_le32(in, "count");
    const size_t per = static_cast<size_t>(set.k) * set.h * set.w;
    set.samples.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        MultiViewSample& s = set.samples[i];
        s.k = set.k;
        s.label = static_cast<int>(read_le32(in, "label"));
        s.views.resize(per);
        for (size_t j = 0; j < per; ++j) s.views[j] = read_f32(in, "pixels");
    }
    return set;
}

}  // namespace pepifed::data

#include "taflab/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "taflab/errors.hpp"
#include "taflab/rng.hpp"

namespace taflab {

namespace fs = std::filesystem;

namespace {

constexpr int kMotionDx[4] = {0, 0, -1, 1};  // up, down, left, right
constexpr int kMotionDy[4] = {-1, 1, 0, 0};
constexpr int kVelocity = 2;  // pixels per frame step

float clampf(float v) { return std::clamp(v, 0.0f, 1.0f); }

// Raised-cosine bump so the sprite has interior structure for the CAM.
float sprite_profile(std::size_t i, std::size_t j, std::size_t side) {
    const double cx = (static_cast<double>(side) - 1) / 2.0;
    const double di = (static_cast<double>(i) - cx) / (cx + 1.0);
    const double dj = (static_cast<double>(j) - cx) / (cx + 1.0);
    const double r2 = di * di + dj * dj;
    return static_cast<float>(0.55 + 0.45 * std::max(0.0, 1.0 - r2));
}

VideoClip make_clip(const SyntheticSpec& spec, std::uint64_t clip_id, int label, Rng rng) {
    const int a = label / 4, b = label % 4;
    const std::size_t T = spec.frames, H = spec.height, W = spec.width, S = spec.sprite;

    // trajectory: phase a drives steps into frames [1, phase_split), phase b
    // the rest
    std::vector<int> px(T), py(T);
    px[0] = py[0] = 0;
    for (std::size_t t = 1; t < T; ++t) {
        const int m = t < spec.phase_split ? a : b;
        px[t] = px[t - 1] + kVelocity * kMotionDx[m];
        py[t] = py[t - 1] + kVelocity * kMotionDy[m];
    }
    const auto [mnx, mxx] = std::minmax_element(px.begin(), px.end());
    const auto [mny, mxy] = std::minmax_element(py.begin(), py.end());
    const int range_x = static_cast<int>(W - S) - (*mxx - *mnx);
    const int range_y = static_cast<int>(H - S) - (*mxy - *mny);
    if (range_x < 0 || range_y < 0)
        throw ConfigError("synthetic clip: sprite trajectory does not fit the frame");
    const int sx = rng.uniform_int(0, range_x) - *mnx;
    const int sy = rng.uniform_int(0, range_y) - *mny;

    const float intensity = static_cast<float>(rng.uniform(0.75, 1.0));

    VideoClip clip;
    clip.label = label;
    clip.clip_id = clip_id;
    clip.frames = T;
    clip.channels = 1;
    clip.height = H;
    clip.width = W;
    clip.pixels.resize(T * H * W);
    for (std::size_t t = 0; t < T; ++t) {
        float* frame = clip.pixels.data() + t * H * W;
        for (std::size_t i = 0; i < H * W; ++i)
            frame[i] = static_cast<float>(rng.uniform()) * spec.noise_floor;
        const int ox = sx + px[t], oy = sy + py[t];
        for (std::size_t i = 0; i < S; ++i)
            for (std::size_t j = 0; j < S; ++j) {
                const std::size_t y = static_cast<std::size_t>(oy) + i;
                const std::size_t x = static_cast<std::size_t>(ox) + j;
                frame[y * W + x] = clampf(intensity * sprite_profile(i, j, S));
            }
    }
    return clip;
}

Dataset make_split(const SyntheticSpec& spec, std::size_t count, std::uint64_t first_id) {
    Dataset ds;
    ds.spec = spec;
    ds.clips.reserve(count);
    const Rng base(spec.seed);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t id = first_id + i;
        const int label = static_cast<int>(i % spec.n_classes);  // exact balance
        ds.clips.push_back(make_clip(spec, id, label, base.fork(id)));
    }
    return ds;
}

// severity tables, index 0 = severity 1; committed as the artifact's contract
constexpr float kGaussSigma[5] = {0.04f, 0.06f, 0.08f, 0.10f, 0.12f};
constexpr float kImpulseP[5] = {0.02f, 0.05f, 0.08f, 0.12f, 0.18f};
constexpr float kSpeckleSigma[5] = {0.10f, 0.15f, 0.20f, 0.28f, 0.38f};
constexpr float kBlurSigma[5] = {0.5f, 0.8f, 1.1f, 1.4f, 1.8f};
constexpr float kDefocusRadius[5] = {1.0f, 1.5f, 2.0f, 2.5f, 3.0f};
constexpr float kZoomMax[5] = {1.06f, 1.12f, 1.18f, 1.24f, 1.31f};
constexpr int kSnowStreaks[5] = {3, 6, 9, 13, 18};
constexpr float kSnowLift[5] = {0.02f, 0.04f, 0.06f, 0.08f, 0.10f};
constexpr float kBrightness[5] = {0.05f, 0.10f, 0.15f, 0.20f, 0.25f};

// Per-frame convolution with a normalized kernel, replicated edges.
void convolve_frame(const float* src, float* dst, std::size_t H, std::size_t W,
                    const std::vector<float>& kernel, int radius) {
    const int k = 2 * radius + 1;
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            float acc = 0;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    const float kv = kernel[static_cast<std::size_t>((dy + radius) * k + dx + radius)];
                    if (kv == 0.0f) continue;
                    const int yy = std::clamp(static_cast<int>(y) + dy, 0, static_cast<int>(H) - 1);
                    const int xx = std::clamp(static_cast<int>(x) + dx, 0, static_cast<int>(W) - 1);
                    acc += kv * src[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)];
                }
            dst[y * W + x] = acc;
        }
}

std::vector<float> gaussian_kernel(float sigma, int radius) {
    const int k = 2 * radius + 1;
    std::vector<float> ker(static_cast<std::size_t>(k * k));
    float sum = 0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
            const float v = std::exp(-(dx * dx + dy * dy) / (2.0f * sigma * sigma));
            ker[static_cast<std::size_t>((dy + radius) * k + dx + radius)] = v;
            sum += v;
        }
    for (auto& v : ker) v /= sum;
    return ker;
}

std::vector<float> disk_kernel(float radius) {
    const int r = static_cast<int>(std::ceil(radius));
    const int k = 2 * r + 1;
    std::vector<float> ker(static_cast<std::size_t>(k * k), 0.0f);
    float sum = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx)
            if (static_cast<float>(dx * dx + dy * dy) <= radius * radius + 1e-6f) {
                ker[static_cast<std::size_t>((dy + r) * k + dx + r)] = 1.0f;
                sum += 1.0f;
            }
    for (auto& v : ker) v /= sum;
    return ker;
}

float bilinear(const float* f, std::size_t H, std::size_t W, float y, float x) {
    const int y0 = std::clamp(static_cast<int>(std::floor(y)), 0, static_cast<int>(H) - 1);
    const int x0 = std::clamp(static_cast<int>(std::floor(x)), 0, static_cast<int>(W) - 1);
    const int y1 = std::min(y0 + 1, static_cast<int>(H) - 1);
    const int x1 = std::min(x0 + 1, static_cast<int>(W) - 1);
    const float fy = y - static_cast<float>(y0), fx = x - static_cast<float>(x0);
    const float a = f[static_cast<std::size_t>(y0) * W + static_cast<std::size_t>(x0)];
    const float b = f[static_cast<std::size_t>(y0) * W + static_cast<std::size_t>(x1)];
    const float c = f[static_cast<std::size_t>(y1) * W + static_cast<std::size_t>(x0)];
    const float d = f[static_cast<std::size_t>(y1) * W + static_cast<std::size_t>(x1)];
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
}

}  // namespace

void SyntheticSpec::validate() const {
    if (n_classes != 16) throw ConfigError("synthetic spec: the motion-pair vocabulary has 16 classes");
    if (frames < 2 || phase_split < 1 || phase_split >= frames)
        throw ConfigError("synthetic spec: phase split must lie strictly inside the clip");
    if (sprite == 0 || sprite >= height || sprite >= width)
        throw ConfigError("synthetic spec: sprite does not fit the frame");
    if (noise_floor < 0.0f || noise_floor >= 1.0f)
        throw ConfigError("synthetic spec: noise floor outside [0,1)");
    if (train_size == 0 || val_size == 0) throw ConfigError("synthetic spec: empty split");
    // the longest single-direction trajectory must leave room for a start
    const std::size_t travel = static_cast<std::size_t>(kVelocity) * (frames - 1);
    if (sprite + travel > height || sprite + travel > width)
        throw ConfigError("synthetic spec: sprite trajectory cannot fit the frame");
}

std::pair<Dataset, Dataset> generate_dataset(const SyntheticSpec& spec) {
    spec.validate();
    return {make_split(spec, spec.train_size, 0), make_split(spec, spec.val_size, spec.train_size)};
}

const std::vector<std::pair<std::string, CorruptionKind>> kCorruptionKinds = {
    {"gaussian-noise", CorruptionKind::gaussian_noise},
    {"impulse-noise", CorruptionKind::impulse_noise},
    {"speckle-noise", CorruptionKind::speckle_noise},
    {"gaussian-blur", CorruptionKind::gaussian_blur},
    {"defocus-blur", CorruptionKind::defocus_blur},
    {"zoom-blur", CorruptionKind::zoom_blur},
    {"snow", CorruptionKind::snow},
    {"brightness", CorruptionKind::brightness},
};

CorruptionKind corruption_kind_from_name(const std::string& name) {
    for (const auto& [n, k] : kCorruptionKinds)
        if (n == name) return k;
    throw ConfigError("unknown corruption kind: " + name);
}

std::string corruption_kind_name(CorruptionKind kind) {
    for (const auto& [n, k] : kCorruptionKinds)
        if (k == kind) return n;
    throw ConfigError("unknown corruption kind");
}

VideoClip corrupt(const VideoClip& clip, const CorruptionSpec& spec) {
    if (spec.severity < 1 || spec.severity > 5)
        throw ConfigError("corruption severity must be 1..5");
    const std::size_t s = static_cast<std::size_t>(spec.severity) - 1;
    const std::size_t T = clip.frames, H = clip.height, W = clip.width;
    const std::size_t n = clip.pixels.size();
    VideoClip out = clip;
    Rng rng = Rng(spec.seed).fork(clip.clip_id);

    switch (spec.kind) {
        case CorruptionKind::gaussian_noise:
            for (std::size_t i = 0; i < n; ++i)
                out.pixels[i] = clampf(clip.pixels[i] +
                                       kGaussSigma[s] * static_cast<float>(rng.normal()));
            break;
        case CorruptionKind::impulse_noise:
            // one uniform draw per pixel: severities are nested by threshold
            for (std::size_t i = 0; i < n; ++i) {
                const double u = rng.uniform();
                const bool salt = rng.uniform() < 0.5;
                if (u < kImpulseP[s]) out.pixels[i] = salt ? 1.0f : 0.0f;
            }
            break;
        case CorruptionKind::speckle_noise:
            for (std::size_t i = 0; i < n; ++i)
                out.pixels[i] = clampf(clip.pixels[i] *
                                       (1.0f + kSpeckleSigma[s] * static_cast<float>(rng.normal())));
            break;
        case CorruptionKind::gaussian_blur: {
            const float sigma = kBlurSigma[s];
            const int radius = std::max(1, static_cast<int>(std::ceil(2.0f * sigma)));
            const auto ker = gaussian_kernel(sigma, radius);
            for (std::size_t t = 0; t < T; ++t)
                convolve_frame(clip.pixels.data() + t * H * W, out.pixels.data() + t * H * W, H, W,
                               ker, radius);
            for (auto& v : out.pixels) v = clampf(v);
            break;
        }
        case CorruptionKind::defocus_blur: {
            const float radius = kDefocusRadius[s];
            const auto ker = disk_kernel(radius);
            const int r = static_cast<int>(std::ceil(radius));
            for (std::size_t t = 0; t < T; ++t)
                convolve_frame(clip.pixels.data() + t * H * W, out.pixels.data() + t * H * W, H, W,
                               ker, r);
            for (auto& v : out.pixels) v = clampf(v);
            break;
        }
        case CorruptionKind::zoom_blur: {
            // average the original with center-crops at nested zoom factors
            std::vector<float> zoom_factors;
            for (float z = 1.02f; z <= kZoomMax[s] + 1e-4f; z += 0.02f) zoom_factors.push_back(z);
            const float cy = (static_cast<float>(H) - 1) / 2.0f;
            const float cx = (static_cast<float>(W) - 1) / 2.0f;
            for (std::size_t t = 0; t < T; ++t) {
                const float* src = clip.pixels.data() + t * H * W;
                float* dst = out.pixels.data() + t * H * W;
                for (std::size_t y = 0; y < H; ++y)
                    for (std::size_t x = 0; x < W; ++x) {
                        float acc = src[y * W + x];
                        for (float z : zoom_factors)
                            acc += bilinear(src, H, W, cy + (static_cast<float>(y) - cy) / z,
                                            cx + (static_cast<float>(x) - cx) / z);
                        dst[y * W + x] = clampf(acc / static_cast<float>(zoom_factors.size() + 1));
                    }
            }
            break;
        }
        case CorruptionKind::snow: {
            // seeded diagonal bright streaks drifting across frames plus a
            // uniform brightness lift; streak sets are nested across severity
            struct Streak {
                float y, x;
            };
            std::vector<Streak> streaks;
            for (int i = 0; i < kSnowStreaks[4]; ++i)
                streaks.push_back({static_cast<float>(rng.uniform(0.0, double(H))),
                                   static_cast<float>(rng.uniform(0.0, double(W)))});
            streaks.resize(static_cast<std::size_t>(kSnowStreaks[s]));
            const int len = 5;
            for (std::size_t t = 0; t < T; ++t) {
                float* dst = out.pixels.data() + t * H * W;
                for (std::size_t i = 0; i < H * W; ++i) dst[i] = clampf(dst[i] + kSnowLift[s]);
                for (const auto& st : streaks) {
                    // drift down-right one pixel per frame
                    const float oy = st.y + static_cast<float>(t);
                    const float ox = st.x + static_cast<float>(t);
                    for (int k = 0; k < len; ++k) {
                        const int y = (static_cast<int>(oy) + k) % static_cast<int>(H);
                        const int x = (static_cast<int>(ox) + k) % static_cast<int>(W);
                        dst[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)] = 1.0f;
                    }
                }
            }
            break;
        }
        case CorruptionKind::brightness:
            for (std::size_t i = 0; i < n; ++i) out.pixels[i] = clampf(clip.pixels[i] + kBrightness[s]);
            break;
        default:
            throw ConfigError("unknown corruption kind");
    }
    return out;
}

Loader::Loader(const std::vector<VideoClip>& clips, std::size_t batch_size)
    : clips_(&clips), batch_size_(batch_size), order_(clips.size()) {
    if (batch_size_ < 1) throw ConfigError("loader: batch size must be >= 1");
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
}

void Loader::shuffle(std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = order_.size(); i > 1; --i)
        std::swap(order_[i - 1], order_[static_cast<std::size_t>(
                                     rng.uniform_int(0, static_cast<int>(i) - 1))]);
}

std::size_t Loader::num_batches() const {
    return (order_.size() + batch_size_ - 1) / batch_size_;
}

Batch Loader::batch(std::size_t index) const {
    if (index >= num_batches()) throw ContractError("loader: batch index out of range");
    const std::size_t lo = index * batch_size_;
    const std::size_t hi = std::min(lo + batch_size_, order_.size());
    Batch b;
    b.clips = hi - lo;
    const auto& first = (*clips_)[order_[lo]];
    const std::size_t per = first.pixels.size();
    std::vector<float> xs(b.clips * per);
    for (std::size_t i = lo; i < hi; ++i) {
        const auto& c = (*clips_)[order_[i]];
        std::copy(c.pixels.begin(), c.pixels.end(), xs.begin() + static_cast<std::ptrdiff_t>((i - lo) * per));
        b.labels.push_back(c.label);
        b.clip_ids.push_back(c.clip_id);
    }
    b.x = Tensor::from_data({b.clips * first.frames, first.channels, first.height, first.width},
                            std::move(xs));
    return b;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "clips", ec);
    if (ec) throw IoError("dataset: cannot create " + dir);

    std::ofstream hdr(fs::path(dir) / "header.txt");
    hdr << "n_classes=" << ds.spec.n_classes << "\n"
        << "frames=" << ds.spec.frames << "\n"
        << "height=" << ds.spec.height << "\n"
        << "width=" << ds.spec.width << "\n"
        << "sprite=" << ds.spec.sprite << "\n"
        << "phase_split=" << ds.spec.phase_split << "\n"
        << "noise_floor=" << ds.spec.noise_floor << "\n"
        << "train_size=" << ds.spec.train_size << "\n"
        << "val_size=" << ds.spec.val_size << "\n"
        << "seed=" << ds.spec.seed << "\n"
        << "count=" << ds.clips.size() << "\n";
    if (!hdr) throw IoError("dataset: cannot write header in " + dir);

    std::ofstream labels(fs::path(dir) / "labels.txt");
    for (const auto& c : ds.clips) {
        labels << c.clip_id << " " << c.label << "\n";
        std::ofstream raw(fs::path(dir) / "clips" / (std::to_string(c.clip_id) + ".raw"),
                          std::ios::binary);
        static_assert(std::endian::native == std::endian::little, "writer assumes little-endian");
        raw.write(reinterpret_cast<const char*>(c.pixels.data()),
                  static_cast<std::streamsize>(c.pixels.size() * sizeof(float)));
        if (!raw) throw IoError("dataset: cannot write clip " + std::to_string(c.clip_id));
    }
    if (!labels) throw IoError("dataset: cannot write labels in " + dir);
}

Dataset load_dataset(const std::string& dir) {
    std::ifstream hdr(fs::path(dir) / "header.txt");
    if (!hdr) throw IoError("dataset: cannot open header in " + dir);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(hdr, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto get = [&](const std::string& key) {
        auto it = kv.find(key);
        if (it == kv.end()) throw IoError("dataset: header missing " + key);
        return it->second;
    };

    Dataset ds;
    ds.spec.n_classes = std::stoul(get("n_classes"));
    ds.spec.frames = std::stoul(get("frames"));
    ds.spec.height = std::stoul(get("height"));
    ds.spec.width = std::stoul(get("width"));
    ds.spec.sprite = std::stoul(get("sprite"));
    ds.spec.phase_split = std::stoul(get("phase_split"));
    ds.spec.noise_floor = std::stof(get("noise_floor"));
    ds.spec.train_size = std::stoul(get("train_size"));
    ds.spec.val_size = std::stoul(get("val_size"));
    ds.spec.seed = std::stoull(get("seed"));
    const std::size_t count = std::stoul(get("count"));

    std::ifstream labels(fs::path(dir) / "labels.txt");
    if (!labels) throw IoError("dataset: cannot open labels in " + dir);
    const std::size_t per = ds.spec.frames * ds.spec.height * ds.spec.width;
    for (std::size_t i = 0; i < count; ++i) {
        VideoClip c;
        if (!(labels >> c.clip_id >> c.label)) throw IoError("dataset: truncated label file in " + dir);
        c.frames = ds.spec.frames;
        c.channels = 1;
        c.height = ds.spec.height;
        c.width = ds.spec.width;
        c.pixels.resize(per);
        std::ifstream raw(fs::path(dir) / "clips" / (std::to_string(c.clip_id) + ".raw"),
                          std::ios::binary);
        raw.read(reinterpret_cast<char*>(c.pixels.data()),
                 static_cast<std::streamsize>(per * sizeof(float)));
        if (!raw) throw IoError("dataset: missing or truncated clip " + std::to_string(c.clip_id));
        ds.clips.push_back(std::move(c));
    }
    return ds;
}

}  // namespace taflab

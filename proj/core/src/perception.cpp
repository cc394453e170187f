#include "stemlink/perception.hpp"
#include "stemlink/rng.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace stemlink::perception {

namespace {

constexpr double kPi = 3.14159265358979323846;

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

int next_pow2(int n) {
    int p = 1;
    while (p < n) p <<= 1;
    return p;
}

// In-place iterative radix-2 FFT.
void fft(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (std::size_t j = 0; j < len / 2; ++j) {
                const auto u = a[i + j];
                const auto v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// Triangular mel filters as (bin, weight) lists per band.
struct MelBank {
    int n_bins = 0;
    std::vector<std::vector<std::pair<int, double>>> filters;
};

MelBank build_mel_bank(int bands, int n_fft, int sample_rate) {
    MelBank bank;
    bank.n_bins = n_fft / 2 + 1;
    bank.filters.resize(bands);
    const double mel_max = hz_to_mel(sample_rate / 2.0);
    std::vector<double> points(bands + 2);
    for (int i = 0; i < bands + 2; ++i) points[i] = mel_max * i / (bands + 1);
    for (int b = 0; b < bands; ++b) {
        const double lo = points[b], center = points[b + 1], hi = points[b + 2];
        for (int k = 0; k < bank.n_bins; ++k) {
            const double mel = hz_to_mel(static_cast<double>(k) * sample_rate / n_fft);
            double w = 0.0;
            if (mel > lo && mel < hi)
                w = mel <= center ? (mel - lo) / (center - lo) : (hi - mel) / (hi - center);
            if (w > 0.0) bank.filters[b].emplace_back(k, w);
        }
    }
    return bank;
}

double sq_dist(const float* a, const float* b, int dim) {
    double d = 0;
    for (int i = 0; i < dim; ++i) {
        const double t = static_cast<double>(a[i]) - b[i];
        d += t * t;
    }
    return d;
}

} // namespace

std::string EncoderSettings::id() const {
    std::ostringstream s;
    s << "logmel-" << window_ms << "-" << hop_ms << "-" << bands << "@" << sample_rate;
    return s.str();
}

void VectorSet::append_rows(const float* rows, int n, int d) {
    if (dim == 0) dim = d;
    if (d != dim) throw std::invalid_argument("VectorSet: dimension mismatch");
    data.insert(data.end(), rows, rows + static_cast<std::size_t>(n) * d);
    count += n;
}

std::string Codebook::fingerprint() const {
    const std::uint64_t h = fnv1a64(centroids.data(), centroids.size() * sizeof(float));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

FeatureSequence encode_features(const audio::AudioBuffer& buf, const EncoderSettings& settings) {
    if (buf.sample_rate != settings.sample_rate)
        throw std::invalid_argument("encode_features: buffer rate " + std::to_string(buf.sample_rate) +
                                    " differs from encoder rate " + std::to_string(settings.sample_rate));
    const int window = settings.sample_rate * settings.window_ms / 1000;
    const int hop = settings.sample_rate * settings.hop_ms / 1000;
    const auto total = static_cast<std::int64_t>(buf.samples.size());
    if (total < window)
        throw std::invalid_argument("encode_features: input of " + std::to_string(total) +
                                    " samples is shorter than one " + std::to_string(window) + "-sample window");

    const int n_fft = next_pow2(window);
    const MelBank bank = build_mel_bank(settings.bands, n_fft, settings.sample_rate);
    std::vector<double> hann(window);
    for (int i = 0; i < window; ++i) hann[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (window - 1));

    FeatureSequence out;
    out.dim = settings.bands;
    out.frame_hop_ms = settings.hop_ms;
    out.frame_window_ms = settings.window_ms;
    out.source_rate = settings.sample_rate;
    out.n_frames = static_cast<int>((total - window) / hop + 1);
    out.data.resize(static_cast<std::size_t>(out.n_frames) * out.dim);

    std::vector<std::complex<double>> spectrum(n_fft);
    std::vector<double> power(bank.n_bins);
    for (int f = 0; f < out.n_frames; ++f) {
        const std::int64_t start = static_cast<std::int64_t>(f) * hop;
        for (int i = 0; i < window; ++i)
            spectrum[i] = buf.samples[static_cast<std::size_t>(start + i)] * hann[i];
        std::fill(spectrum.begin() + window, spectrum.end(), std::complex<double>(0.0, 0.0));
        fft(spectrum);
        for (int k = 0; k < bank.n_bins; ++k) power[k] = std::norm(spectrum[k]);
        float* row = out.data.data() + static_cast<std::size_t>(f) * out.dim;
        for (int b = 0; b < settings.bands; ++b) {
            double e = 0;
            for (const auto& [bin, w] : bank.filters[b]) e += w * power[bin];
            row[b] = static_cast<float>(std::log(std::max(e, settings.log_floor)));
        }
    }
    return out;
}

void export_features(const FeatureSequence& features, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("export_features: cannot open '" + path.string() + "'");
    out << "D=" << features.dim << " hop_ms=" << features.frame_hop_ms << " rate=" << features.source_rate << "\n";
    char buf[32];
    for (int f = 0; f < features.n_frames; ++f) {
        const float* row = features.row(f);
        for (int d = 0; d < features.dim; ++d) {
            std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(row[d]));
            out << (d ? " " : "") << buf;
        }
        out << "\n";
    }
    if (!out) throw std::runtime_error("export_features: write failed for '" + path.string() + "'");
}

FeatureSequence import_features(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("import_features: cannot open '" + path.string() + "'");
    std::string header;
    if (!std::getline(in, header)) throw std::runtime_error("import_features: missing header line");
    FeatureSequence out;
    if (std::sscanf(header.c_str(), "D=%d hop_ms=%d rate=%d", &out.dim, &out.frame_hop_ms, &out.source_rate) != 3)
        throw std::runtime_error("import_features: malformed header '" + header + "'");
    if (out.dim <= 0) throw std::runtime_error("import_features: non-positive dimension in header");

    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        int got = 0;
        float v;
        while (row >> v) {
            out.data.push_back(v);
            ++got;
        }
        if (got != out.dim)
            throw std::runtime_error("import_features: row " + std::to_string(out.n_frames) + " has " +
                                     std::to_string(got) + " values, header says D=" + std::to_string(out.dim));
        ++out.n_frames;
    }
    return out;
}

CondensedSequence condense(const FeatureSequence& features, const std::vector<audio::SegmentSpan>& spans) {
    CondensedSequence out;
    out.dim = features.dim;
    out.n = static_cast<int>(spans.size());
    out.data.assign(static_cast<std::size_t>(out.n) * out.dim, 0.0f);
    if (spans.empty()) return out;

    // Frame f covers [f*hop, f*hop + window); its center is f*hop + window/2.
    const int hop_samples = features.source_rate * features.frame_hop_ms / 1000;
    const double center_shift = features.source_rate * features.frame_window_ms / 1000.0 / 2.0;

    for (std::size_t s = 0; s < spans.size(); ++s) {
        const auto& span = spans[s];
        double* acc = nullptr;
        std::vector<double> sum(static_cast<std::size_t>(features.dim), 0.0);
        acc = sum.data();
        int count = 0;
        for (int f = 0; f < features.n_frames; ++f) {
            const double center = static_cast<double>(f) * hop_samples + center_shift;
            if (center < static_cast<double>(span.start)) continue;
            if (center >= static_cast<double>(span.start + span.length)) break;
            const float* row = features.row(f);
            for (int d = 0; d < features.dim; ++d) acc[d] += row[d];
            ++count;
        }
        if (count == 0)
            throw std::runtime_error("condense: span " + std::to_string(span.index) + " at sample " +
                                     std::to_string(span.start) + " covers no frame centers");
        float* dst = out.data.data() + s * static_cast<std::size_t>(out.dim);
        for (int d = 0; d < features.dim; ++d) dst[d] = static_cast<float>(acc[d] / count);
    }
    const auto& first = spans.front();
    out.segment_duration_ms = static_cast<int>(first.length * 1000 / features.source_rate);
    return out;
}

Codebook fit_codebook(const VectorSet& vectors, int k, std::uint64_t seed, int segment_duration_ms,
                      const std::string& encoder_id, KMeansTrace* trace) {
    if (k < 2) throw std::invalid_argument("fit_codebook: alphabet size must be at least 2");
    if (vectors.count < k)
        throw std::invalid_argument("fit_codebook: " + std::to_string(vectors.count) + " vectors for " +
                                    std::to_string(k) + " clusters");
    const int n = vectors.count, dim = vectors.dim;

    // Distinct-row count; duplicated rows cannot seed distinct centroids.
    {
        std::vector<int> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            return std::lexicographical_compare(vectors.row(a), vectors.row(a) + dim, vectors.row(b),
                                                vectors.row(b) + dim);
        });
        int distinct = 1;
        for (int i = 1; i < n; ++i)
            if (!std::equal(vectors.row(order[i - 1]), vectors.row(order[i - 1]) + dim, vectors.row(order[i])))
                ++distinct;
        if (distinct < k)
            throw std::invalid_argument("fit_codebook: only " + std::to_string(distinct) +
                                        " distinct vectors for " + std::to_string(k) + " clusters");
    }

    Rng rng(seed);
    std::vector<double> centroids(static_cast<std::size_t>(k) * dim);
    auto centroid_row = [&](int c) { return centroids.data() + static_cast<std::size_t>(c) * dim; };
    auto set_centroid = [&](int c, const float* src) {
        double* dst = centroid_row(c);
        for (int d = 0; d < dim; ++d) dst[d] = src[d];
    };
    auto dist_to_centroid = [&](int point, int c) {
        const float* p = vectors.row(point);
        const double* q = centroid_row(c);
        double s = 0;
        for (int d = 0; d < dim; ++d) {
            const double t = p[d] - q[d];
            s += t * t;
        }
        return s;
    };

    // k-means++ seeding
    {
        std::uniform_int_distribution<int> first(0, n - 1);
        set_centroid(0, vectors.row(first(rng)));
        std::vector<double> best(static_cast<std::size_t>(n), std::numeric_limits<double>::max());
        for (int c = 1; c < k; ++c) {
            double total = 0;
            for (int i = 0; i < n; ++i) {
                best[i] = std::min(best[i], dist_to_centroid(i, c - 1));
                total += best[i];
            }
            int pick = 0;
            if (total > 0) {
                std::uniform_real_distribution<double> uni(0.0, total);
                double target = uni(rng), acc = 0;
                for (int i = 0; i < n; ++i) {
                    acc += best[i];
                    if (acc >= target) {
                        pick = i;
                        break;
                    }
                    pick = i;
                }
            }
            set_centroid(c, vectors.row(pick));
        }
    }

    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    std::vector<double> point_dist(static_cast<std::size_t>(n), 0.0);
    std::vector<int> cluster_size(static_cast<std::size_t>(k), 0);
    double prev_inertia = -1;
    double inertia = 0;
    KMeansTrace local_trace;
    KMeansTrace& tr = trace ? *trace : local_trace;
    tr = KMeansTrace{};

    // Each pass assigns and records inertia against the current centroids, so
    // the reported inertia always matches the returned centroids; Lloyd
    // updates run at most kMaxIterations times.
    constexpr int kMaxIterations = 300;
    for (int it = 0; it <= kMaxIterations; ++it) {
        inertia = 0;
        std::fill(cluster_size.begin(), cluster_size.end(), 0);
        for (int i = 0; i < n; ++i) {
            double bd = dist_to_centroid(i, 0);
            int bc = 0;
            for (int c = 1; c < k; ++c) {
                const double d = dist_to_centroid(i, c);
                if (d < bd) {
                    bd = d;
                    bc = c;
                }
            }
            assign[i] = bc;
            point_dist[i] = bd;
            ++cluster_size[bc];
            inertia += bd;
        }
        tr.inertia_per_iteration.push_back(inertia);
        tr.iterations = it;

        const bool converged = prev_inertia >= 0 &&
                               (prev_inertia == 0 || (prev_inertia - inertia) / prev_inertia < 1e-6);
        if (converged || inertia == 0 || it == kMaxIterations) break;
        prev_inertia = inertia;

        // Empty clusters steal the point farthest from its current centroid.
        for (int c = 0; c < k; ++c) {
            if (cluster_size[c] != 0) continue;
            int far = 0;
            double fd = -1;
            for (int i = 0; i < n; ++i) {
                if (cluster_size[assign[i]] <= 1) continue;
                if (point_dist[i] > fd) {
                    fd = point_dist[i];
                    far = i;
                }
            }
            set_centroid(c, vectors.row(far));
            --cluster_size[assign[far]];
            assign[far] = c;
            cluster_size[c] = 1;
            point_dist[far] = 0;
            ++tr.empty_cluster_repairs;
        }

        // Mean update
        std::vector<double> sums(static_cast<std::size_t>(k) * dim, 0.0);
        for (int i = 0; i < n; ++i) {
            const float* p = vectors.row(i);
            double* s = sums.data() + static_cast<std::size_t>(assign[i]) * dim;
            for (int d = 0; d < dim; ++d) s[d] += p[d];
        }
        for (int c = 0; c < k; ++c) {
            if (cluster_size[c] == 0) continue;
            double* dst = centroid_row(c);
            const double* s = sums.data() + static_cast<std::size_t>(c) * dim;
            for (int d = 0; d < dim; ++d) dst[d] = s[d] / cluster_size[c];
        }
    }

    Codebook cb;
    cb.k = k;
    cb.dim = dim;
    cb.segment_duration_ms = segment_duration_ms;
    cb.encoder_id = encoder_id;
    cb.training_inertia = inertia;
    cb.centroids.resize(static_cast<std::size_t>(k) * dim);
    for (std::size_t i = 0; i < cb.centroids.size(); ++i) cb.centroids[i] = static_cast<float>(centroids[i]);
    return cb;
}

TokenSequence quantize(const CondensedSequence& cond, const Codebook& cb) {
    if (cond.dim != cb.dim)
        throw std::invalid_argument("quantize: vector dimension " + std::to_string(cond.dim) +
                                    " does not match codebook dimension " + std::to_string(cb.dim));
    TokenSequence out;
    out.k = cb.k;
    out.ids.resize(static_cast<std::size_t>(cond.n));
    for (int i = 0; i < cond.n; ++i) {
        const float* v = cond.row(i);
        double bd = sq_dist(v, cb.row(0), cb.dim);
        int bc = 0;
        for (int c = 1; c < cb.k; ++c) {
            const double d = sq_dist(v, cb.row(c), cb.dim);
            if (d < bd) { // strict: ties keep the lowest index
                bd = d;
                bc = c;
            }
        }
        out.ids[static_cast<std::size_t>(i)] = bc;
    }
    return out;
}

TokenSequence perceive(const audio::AudioBuffer& buf, const Codebook& cb, const EncoderSettings& settings) {
    if (settings.bands != cb.dim)
        throw std::invalid_argument("perceive: encoder bands " + std::to_string(settings.bands) +
                                    " do not match codebook dimension " + std::to_string(cb.dim));
    if (!cb.encoder_id.empty() && cb.encoder_id != settings.id())
        throw std::invalid_argument("perceive: codebook was built with encoder '" + cb.encoder_id +
                                    "', pipeline uses '" + settings.id() + "'");
    const audio::AudioBuffer* src = &buf;
    audio::AudioBuffer resampled;
    if (buf.sample_rate != settings.sample_rate) {
        resampled = audio::resample(buf, settings.sample_rate);
        src = &resampled;
    }
    const auto features = encode_features(*src, settings);
    const auto spans = audio::segment_uniform(*src, cb.segment_duration_ms);
    const auto cond = condense(features, spans);
    return quantize(cond, cb);
}

namespace {

constexpr char kCodebookMagic[4] = {'S', 'T', 'L', 'K'};
constexpr std::uint16_t kCodebookVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("codebook '" + path.string() + "': truncated file");
    return v;
}

} // namespace

void save_codebook(const Codebook& cb, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_codebook: cannot open '" + path.string() + "'");
    out.write(kCodebookMagic, 4);
    put<std::uint16_t>(out, kCodebookVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(cb.k));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(cb.dim));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(cb.segment_duration_ms));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(cb.encoder_id.size()));
    out.write(cb.encoder_id.data(), static_cast<std::streamsize>(cb.encoder_id.size()));
    out.write(reinterpret_cast<const char*>(cb.centroids.data()),
              static_cast<std::streamsize>(cb.centroids.size() * sizeof(float)));
    if (!out) throw std::runtime_error("save_codebook: write failed for '" + path.string() + "'");
}

Codebook load_codebook(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_codebook: cannot open '" + path.string() + "'");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCodebookMagic, 4) != 0)
        throw std::runtime_error("codebook '" + path.string() + "': bad magic bytes");
    const auto version = get<std::uint16_t>(in, path);
    if (version != kCodebookVersion)
        throw std::runtime_error("codebook '" + path.string() + "': unsupported version " + std::to_string(version));
    Codebook cb;
    cb.k = static_cast<int>(get<std::uint32_t>(in, path));
    cb.dim = static_cast<int>(get<std::uint32_t>(in, path));
    cb.segment_duration_ms = static_cast<int>(get<std::uint32_t>(in, path));
    const auto id_len = get<std::uint32_t>(in, path);
    cb.encoder_id.resize(id_len);
    in.read(cb.encoder_id.data(), id_len);
    if (cb.k < 2 || cb.dim <= 0)
        throw std::runtime_error("codebook '" + path.string() + "': invalid dimensions");
    cb.centroids.resize(static_cast<std::size_t>(cb.k) * cb.dim);
    in.read(reinterpret_cast<char*>(cb.centroids.data()),
            static_cast<std::streamsize>(cb.centroids.size() * sizeof(float)));
    if (!in) throw std::runtime_error("codebook '" + path.string() + "': truncated centroid data");
    return cb;
}

} // namespace stemlink::perception

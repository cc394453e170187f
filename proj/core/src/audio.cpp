#include "stemlink/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

namespace stemlink::audio {

namespace {

constexpr double kPi = 3.14159265358979323846;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& why) {
    throw std::runtime_error("wav '" + path.string() + "': " + why);
}

struct FmtChunk {
    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint32_t sample_rate = 0;
    std::uint16_t bits = 0;
};

template <typename T>
T read_le(const std::vector<char>& bytes, std::size_t off) {
    T v{};
    std::memcpy(&v, bytes.data() + off, sizeof(T));
    return v;
}

struct WavChunks {
    FmtChunk fmt;
    std::size_t data_off = 0;
    std::size_t data_size = 0;
};

WavChunks parse_wav(const std::vector<char>& bytes, const std::filesystem::path& path) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
        fail(path, "not a RIFF/WAVE file");
    WavChunks out;
    bool have_fmt = false, have_data = false;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        char id[5] = {0};
        std::memcpy(id, bytes.data() + pos, 4);
        const auto size = read_le<std::uint32_t>(bytes, pos + 4);
        pos += 8;
        if (pos + size > bytes.size()) fail(path, std::string("truncated '") + id + "' chunk");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (size < 16) fail(path, "fmt chunk too small");
            out.fmt.format = read_le<std::uint16_t>(bytes, pos);
            out.fmt.channels = read_le<std::uint16_t>(bytes, pos + 2);
            out.fmt.sample_rate = read_le<std::uint32_t>(bytes, pos + 4);
            out.fmt.bits = read_le<std::uint16_t>(bytes, pos + 14);
            have_fmt = true;
        } else if (std::memcmp(id, "data", 4) == 0) {
            out.data_off = pos;
            out.data_size = size;
            have_data = true;
        }
        pos += size + (size & 1); // chunks are word-aligned
    }
    if (!have_fmt) fail(path, "missing fmt chunk");
    if (!have_data) fail(path, "missing data chunk");
    if (out.fmt.channels < 1 || out.fmt.channels > 2)
        fail(path, "unsupported channel count " + std::to_string(out.fmt.channels));
    const bool pcm16 = out.fmt.format == 1 && out.fmt.bits == 16;
    const bool f32 = out.fmt.format == 3 && out.fmt.bits == 32;
    if (!pcm16 && !f32)
        fail(path, "unsupported encoding (format tag " + std::to_string(out.fmt.format) + ", " +
                       std::to_string(out.fmt.bits) + " bits); need 16-bit PCM or 32-bit float");
    if (out.fmt.sample_rate == 0) fail(path, "zero sample rate");
    return out;
}

std::vector<char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open for reading");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_le(std::ofstream& out, const void* p, std::size_t n) { out.write(static_cast<const char*>(p), n); }

template <typename T>
void write_le(std::ofstream& out, T v) {
    write_le(out, &v, sizeof(T));
}

} // namespace

AudioBuffer load_wav(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    const auto chunks = parse_wav(bytes, path);
    const int ch = chunks.fmt.channels;
    const std::size_t bytes_per_sample = chunks.fmt.bits / 8;
    const std::size_t frame_bytes = bytes_per_sample * ch;
    const std::size_t frames = frame_bytes ? chunks.data_size / frame_bytes : 0;

    AudioBuffer buf;
    buf.sample_rate = static_cast<int>(chunks.fmt.sample_rate);
    buf.samples.resize(frames);
    for (std::size_t f = 0; f < frames; ++f) {
        double acc = 0;
        for (int c = 0; c < ch; ++c) {
            const std::size_t off = chunks.data_off + f * frame_bytes + c * bytes_per_sample;
            if (chunks.fmt.bits == 16) {
                acc += read_le<std::int16_t>(bytes, off) / 32768.0;
            } else {
                acc += read_le<float>(bytes, off);
            }
        }
        buf.samples[f] = static_cast<float>(std::clamp(acc / ch, -1.0, 1.0));
    }
    return buf;
}

WavInfo wav_info(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    const auto chunks = parse_wav(bytes, path);
    const std::size_t frame_bytes = (chunks.fmt.bits / 8) * chunks.fmt.channels;
    WavInfo info;
    info.sample_rate = static_cast<int>(chunks.fmt.sample_rate);
    info.channels = chunks.fmt.channels;
    info.frames = frame_bytes ? static_cast<std::int64_t>(chunks.data_size / frame_bytes) : 0;
    return info;
}

std::size_t write_wav(const AudioBuffer& buf, const std::filesystem::path& path) {
    if (buf.sample_rate <= 0) throw std::invalid_argument("write_wav: sample rate must be positive");
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path, "cannot open for writing");

    const std::uint32_t data_size = static_cast<std::uint32_t>(buf.samples.size() * 2);
    out.write("RIFF", 4);
    write_le<std::uint32_t>(out, 36 + data_size);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    write_le<std::uint32_t>(out, 16);
    write_le<std::uint16_t>(out, 1); // PCM
    write_le<std::uint16_t>(out, 1); // mono
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(buf.sample_rate));
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(buf.sample_rate) * 2);
    write_le<std::uint16_t>(out, 2);
    write_le<std::uint16_t>(out, 16);
    out.write("data", 4);
    write_le<std::uint32_t>(out, data_size);

    std::size_t clipped = 0;
    for (float s : buf.samples) {
        if (s < -1.0f || s > 1.0f) ++clipped;
        const long q = std::lround(static_cast<double>(s) * 32768.0);
        write_le<std::int16_t>(out, static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L)));
    }
    if (!out) fail(path, "write failed");
    return clipped;
}

AudioBuffer resample(const AudioBuffer& buf, int target_rate) {
    if (target_rate <= 0) throw std::invalid_argument("resample: target rate must be positive");
    if (buf.sample_rate <= 0) throw std::invalid_argument("resample: source rate must be positive");
    if (target_rate == buf.sample_rate) return buf;

    const std::size_t n_in = buf.samples.size();
    AudioBuffer out;
    out.sample_rate = target_rate;
    if (n_in == 0) return out;
    const std::size_t n_out = static_cast<std::size_t>(
        std::llround(static_cast<double>(n_in) * target_rate / buf.sample_rate));
    out.samples.resize(n_out);
    const double step = static_cast<double>(buf.sample_rate) / target_rate;
    for (std::size_t i = 0; i < n_out; ++i) {
        const double pos = i * step;
        const std::size_t i0 = std::min(static_cast<std::size_t>(pos), n_in - 1);
        const std::size_t i1 = std::min(i0 + 1, n_in - 1);
        const double frac = pos - static_cast<double>(i0);
        out.samples[i] = static_cast<float>((1.0 - frac) * buf.samples[i0] + frac * buf.samples[i1]);
    }
    return out;
}

AudioBuffer normalize_peak(const AudioBuffer& buf, double dbfs) {
    float peak = 0;
    for (float s : buf.samples) peak = std::max(peak, std::abs(s));
    if (peak <= 0) return buf;
    const double gain = std::pow(10.0, dbfs / 20.0) / peak;
    AudioBuffer out;
    out.sample_rate = buf.sample_rate;
    out.samples.resize(buf.samples.size());
    for (std::size_t i = 0; i < buf.samples.size(); ++i)
        out.samples[i] = static_cast<float>(buf.samples[i] * gain);
    return out;
}

std::vector<SegmentSpan> segment_uniform(const AudioBuffer& buf, int duration_ms) {
    if (duration_ms <= 0) throw std::invalid_argument("segment_uniform: duration must be positive");
    if (buf.sample_rate <= 0) throw std::invalid_argument("segment_uniform: sample rate must be positive");
    const std::int64_t window = static_cast<std::int64_t>(buf.sample_rate) * duration_ms / 1000;
    if (window <= 0) throw std::invalid_argument("segment_uniform: window shorter than one sample");

    const auto total = static_cast<std::int64_t>(buf.samples.size());
    const std::int64_t full = total / window;
    const std::int64_t remainder = total - full * window;

    std::vector<SegmentSpan> spans;
    spans.reserve(static_cast<std::size_t>(full) + 1);
    for (std::int64_t i = 0; i < full; ++i)
        spans.push_back({i * window, window, static_cast<int>(i)});
    if (2 * remainder >= window) // zero-padded final span
        spans.push_back({full * window, window, static_cast<int>(full)});
    return spans;
}

AudioBuffer concat_with_crossfade(const AudioBuffer& source, const std::vector<std::optional<SegmentSpan>>& selection,
                                  int crossfade_ms, std::int64_t segment_length) {
    AudioBuffer out;
    out.sample_rate = source.sample_rate;
    if (selection.empty()) return out;

    std::int64_t seg = segment_length;
    for (const auto& e : selection) {
        if (!e) continue;
        if (e->start < 0 || e->start >= static_cast<std::int64_t>(source.samples.size()))
            throw std::out_of_range("concat_with_crossfade: span " + std::to_string(e->index) +
                                    " starts outside the source buffer");
        if (seg == 0) seg = e->length;
        if (e->length != seg)
            throw std::invalid_argument("concat_with_crossfade: spans must share one length");
    }
    if (seg <= 0)
        throw std::invalid_argument("concat_with_crossfade: segment length unknown (all-silence selection "
                                    "needs an explicit segment_length)");

    if (crossfade_ms < 0) throw std::invalid_argument("concat_with_crossfade: negative crossfade");
    const std::int64_t cf = static_cast<std::int64_t>(source.sample_rate) * crossfade_ms / 1000;
    if (2 * cf >= seg)
        throw std::invalid_argument("concat_with_crossfade: crossfade must be shorter than half a segment");

    const auto n = static_cast<std::int64_t>(selection.size());
    out.samples.assign(static_cast<std::size_t>(n * seg - (n - 1) * cf), 0.0f);

    const auto src_len = static_cast<std::int64_t>(source.samples.size());
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t offset = i * (seg - cf);
        const auto& entry = selection[static_cast<std::size_t>(i)];
        for (std::int64_t j = 0; j < seg; ++j) {
            float s = 0.0f;
            if (entry) {
                const std::int64_t src = entry->start + j;
                if (src < src_len) s = source.samples[static_cast<std::size_t>(src)];
            }
            if (s == 0.0f) continue;
            double gain = 1.0;
            if (cf > 0 && i > 0 && j < cf) gain *= std::sin((j + 0.5) / cf * kPi / 2.0);
            if (cf > 0 && i < n - 1 && j >= seg - cf) gain *= std::cos((j - (seg - cf) + 0.5) / cf * kPi / 2.0);
            out.samples[static_cast<std::size_t>(offset + j)] += static_cast<float>(s * gain);
        }
    }
    return out;
}

} // namespace stemlink::audio

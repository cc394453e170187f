#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace stemlink::audio {

struct AudioBuffer {
    std::vector<float> samples; // mono, nominally in [-1, 1]
    int sample_rate = 0;

    double duration_seconds() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

// One segment of a uniform segmentation. `length` may extend past the end of
// the source buffer; the missing tail reads as zeros (the padded final span).
struct SegmentSpan {
    std::int64_t start = 0;
    std::int64_t length = 0;
    int index = 0;
};

struct WavInfo {
    int sample_rate = 0;
    int channels = 0;
    std::int64_t frames = 0;
    double duration_seconds() const { return sample_rate > 0 ? static_cast<double>(frames) / sample_rate : 0.0; }
};

// PCM 16-bit or IEEE float 32-bit RIFF/WAVE, 1-2 channels. Stereo is
// downmixed by channel mean.
AudioBuffer load_wav(const std::filesystem::path& path);
WavInfo wav_info(const std::filesystem::path& path);

// 16-bit PCM mono. Returns how many samples fell outside [-1, 1] and were
// clipped.
std::size_t write_wav(const AudioBuffer& buf, const std::filesystem::path& path);

// Linear interpolation; identity (bit-exact copy) when rates match.
AudioBuffer resample(const AudioBuffer& buf, int target_rate);

// Scales so the peak hits the given dBFS level; silence is returned as-is.
AudioBuffer normalize_peak(const AudioBuffer& buf, double dbfs);

// Tiles the buffer with windows of duration_ms. A trailing remainder of at
// least half a window becomes a final zero-padded span; shorter remainders
// are dropped. Buffers below half a window yield an empty list.
std::vector<SegmentSpan> segment_uniform(const AudioBuffer& buf, int duration_ms);

// Equal-power crossfaded concatenation. nullopt entries emit one segment of
// silence. All spans must share one length; `segment_length` is only needed
// when the selection contains no span to infer it from.
AudioBuffer concat_with_crossfade(const AudioBuffer& source, const std::vector<std::optional<SegmentSpan>>& selection,
                                  int crossfade_ms, std::int64_t segment_length = 0);

} // namespace stemlink::audio

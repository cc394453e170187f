#pragma once

#include "stemlink/audio.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stemlink::perception {

// Deterministic log-mel frontend standing in for a pretrained encoder behind
// the same interface. Same input, same settings -> bit-identical output.
struct EncoderSettings {
    int sample_rate = 16000;
    int window_ms = 25;
    int hop_ms = 20;
    int bands = 64;
    double log_floor = 1e-10;

    std::string id() const;
};

struct FeatureSequence {
    std::vector<float> data; // row-major, n_frames x dim
    int n_frames = 0;
    int dim = 0;
    int frame_hop_ms = 0;
    int frame_window_ms = 25; // analysis window; frame centers sit at f*hop + window/2
    int source_rate = 0;

    const float* row(int i) const { return data.data() + static_cast<std::size_t>(i) * dim; }
};

struct CondensedSequence {
    std::vector<float> data; // row-major, n x dim
    int n = 0;
    int dim = 0;
    int segment_duration_ms = 0;

    const float* row(int i) const { return data.data() + static_cast<std::size_t>(i) * dim; }
};

// Flat matrix used to pool condensed vectors across many stems for codebook
// training.
struct VectorSet {
    std::vector<float> data;
    int count = 0;
    int dim = 0;

    void append_rows(const float* rows, int n, int d);
    void append(const CondensedSequence& c) { append_rows(c.data.data(), c.n, c.dim); }
    const float* row(int i) const { return data.data() + static_cast<std::size_t>(i) * dim; }
};

struct Codebook {
    std::vector<float> centroids; // row-major, k x dim
    int k = 0;
    int dim = 0;
    int segment_duration_ms = 0;
    std::string encoder_id;
    double training_inertia = 0.0;

    const float* row(int i) const { return centroids.data() + static_cast<std::size_t>(i) * dim; }
    std::string fingerprint() const; // short hex tag over the centroid bytes
};

struct TokenSequence {
    std::vector<int> ids;
    int k = 0;

    std::size_t size() const { return ids.size(); }
};

struct KMeansTrace {
    std::vector<double> inertia_per_iteration; // recorded after each assignment
    int iterations = 0;
    int empty_cluster_repairs = 0;
};

FeatureSequence encode_features(const audio::AudioBuffer& buf, const EncoderSettings& settings);

void export_features(const FeatureSequence& features, const std::filesystem::path& path);
FeatureSequence import_features(const std::filesystem::path& path);

// Mean of the frames whose centers fall inside each span.
CondensedSequence condense(const FeatureSequence& features, const std::vector<audio::SegmentSpan>& spans);

// Lloyd's algorithm, k-means++ init, Euclidean metric, max 300 iterations,
// convergence at relative inertia decrease < 1e-6, empty clusters reseeded to
// the point farthest from its centroid. Deterministic given seed.
Codebook fit_codebook(const VectorSet& vectors, int k, std::uint64_t seed, int segment_duration_ms,
                      const std::string& encoder_id, KMeansTrace* trace = nullptr);

// Nearest centroid by L2; ties go to the lowest index.
TokenSequence quantize(const CondensedSequence& cond, const Codebook& cb);

// encode -> segment -> condense -> quantize. Resamples to the encoder rate
// when needed.
TokenSequence perceive(const audio::AudioBuffer& buf, const Codebook& cb, const EncoderSettings& settings);

void save_codebook(const Codebook& cb, const std::filesystem::path& path);
Codebook load_codebook(const std::filesystem::path& path);

} // namespace stemlink::perception

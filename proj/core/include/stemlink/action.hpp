#pragma once

#include "stemlink/audio.hpp"
#include "stemlink/perception.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stemlink::action {

struct CorpusEntry {
    audio::SegmentSpan span;
    int label = 0;
};

// Labeled segment inventory over one synthesis audio file: each uniform span
// paired with its class id from the perception pass.
struct Corpus {
    std::string source_path;
    int sample_rate = 0;
    int segment_duration_ms = 0;
    std::string codebook_id;
    std::vector<CorpusEntry> entries;
    int k = 0; // alphabet size; 0 when loaded from JSON without a codebook at hand

    std::vector<int> label_set() const; // sorted unique labels
};

constexpr int kSilence = -1;

// Sequence of corpus entry indices; kSilence marks positions with no
// candidate segment.
struct Selection {
    std::vector<int> indices;
};

Corpus build_corpus(const audio::AudioBuffer& buf, const perception::Codebook& cb,
                    const perception::EncoderSettings& settings, const std::string& source_path = "");

// Greedy label matcher standing in for a scenario engine: keep playing the
// next consecutive segment while its label matches, otherwise pick uniformly
// among the entries carrying the requested label; no candidate -> silence.
Selection select_segments(const Corpus& corpus, const perception::TokenSequence& spec, std::uint64_t seed);

audio::AudioBuffer render(const audio::AudioBuffer& source, const Corpus& corpus, const Selection& selection,
                          int crossfade_ms);

void save_corpus_json(const Corpus& corpus, const std::filesystem::path& path, const std::string& config_hash = "");
Corpus load_corpus_json(const std::filesystem::path& path);

} // namespace stemlink::action

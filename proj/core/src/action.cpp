#include "stemlink/action.hpp"
#include "stemlink/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <stdexcept>

namespace stemlink::action {

using json = nlohmann::json;

std::vector<int> Corpus::label_set() const {
    std::set<int> labels;
    for (const auto& e : entries) labels.insert(e.label);
    return {labels.begin(), labels.end()};
}

Corpus build_corpus(const audio::AudioBuffer& buf, const perception::Codebook& cb,
                    const perception::EncoderSettings& settings, const std::string& source_path) {
    const auto tokens = perception::perceive(buf, cb, settings);
    const auto spans = audio::segment_uniform(buf, cb.segment_duration_ms);
    if (tokens.ids.size() != spans.size())
        throw std::runtime_error("build_corpus: token/span count mismatch");

    Corpus corpus;
    corpus.source_path = source_path;
    corpus.sample_rate = buf.sample_rate;
    corpus.segment_duration_ms = cb.segment_duration_ms;
    corpus.codebook_id = cb.encoder_id + "/K" + std::to_string(cb.k) + "/" + cb.fingerprint();
    corpus.k = cb.k;
    corpus.entries.reserve(spans.size());
    for (std::size_t i = 0; i < spans.size(); ++i) corpus.entries.push_back({spans[i], tokens.ids[i]});
    return corpus;
}

Selection select_segments(const Corpus& corpus, const perception::TokenSequence& spec, std::uint64_t seed) {
    if (corpus.k > 0 && spec.k != corpus.k)
        throw std::invalid_argument("select_segments: specification alphabet " + std::to_string(spec.k) +
                                    " does not match corpus alphabet " + std::to_string(corpus.k));

    // Candidate entry indices per label.
    std::vector<std::vector<int>> by_label;
    for (std::size_t i = 0; i < corpus.entries.size(); ++i) {
        const int label = corpus.entries[i].label;
        if (label >= static_cast<int>(by_label.size())) by_label.resize(static_cast<std::size_t>(label) + 1);
        by_label[static_cast<std::size_t>(label)].push_back(static_cast<int>(i));
    }

    Rng rng(derive_seed(seed, "select_segments"));
    Selection sel;
    sel.indices.reserve(spec.ids.size());
    int previous = -1; // virtual predecessor: entry 0 continues the start
    for (int label : spec.ids) {
        const auto* candidates =
            (label >= 0 && label < static_cast<int>(by_label.size())) ? &by_label[static_cast<std::size_t>(label)]
                                                                      : nullptr;
        if (!candidates || candidates->empty()) {
            sel.indices.push_back(kSilence);
            previous = -1;
            continue;
        }
        int chosen;
        const int successor = previous + 1;
        if (previous != kSilence && successor < static_cast<int>(corpus.entries.size()) &&
            corpus.entries[static_cast<std::size_t>(successor)].label == label) {
            chosen = successor; // continuity preference
        } else {
            std::uniform_int_distribution<std::size_t> pick(0, candidates->size() - 1);
            chosen = (*candidates)[pick(rng)];
        }
        sel.indices.push_back(chosen);
        previous = chosen;
    }
    return sel;
}

audio::AudioBuffer render(const audio::AudioBuffer& source, const Corpus& corpus, const Selection& selection,
                          int crossfade_ms) {
    std::vector<std::optional<audio::SegmentSpan>> spans;
    spans.reserve(selection.indices.size());
    std::int64_t segment_length = 0;
    if (!corpus.entries.empty()) segment_length = corpus.entries.front().span.length;
    for (int idx : selection.indices) {
        if (idx == kSilence) {
            spans.emplace_back(std::nullopt);
        } else {
            if (idx < 0 || idx >= static_cast<int>(corpus.entries.size()))
                throw std::out_of_range("render: selection references entry " + std::to_string(idx) +
                                        " of a corpus with " + std::to_string(corpus.entries.size()) + " entries");
            spans.emplace_back(corpus.entries[static_cast<std::size_t>(idx)].span);
        }
    }
    return audio::concat_with_crossfade(source, spans, crossfade_ms, segment_length);
}

void save_corpus_json(const Corpus& corpus, const std::filesystem::path& path, const std::string& config_hash) {
    json entries = json::array();
    for (const auto& e : corpus.entries)
        entries.push_back({{"start", e.span.start}, {"length", e.span.length}, {"label", e.label}});
    json doc = {
        {"source_path", corpus.source_path},
        {"sample_rate", corpus.sample_rate},
        {"segment_duration_ms", corpus.segment_duration_ms},
        {"codebook_id", corpus.codebook_id},
        {"entries", std::move(entries)},
    };
    if (!config_hash.empty()) doc["config_hash"] = config_hash;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_corpus_json: cannot open '" + path.string() + "'");
    out << doc.dump(2) << "\n";
}

Corpus load_corpus_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_corpus_json: cannot open '" + path.string() + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw std::runtime_error("load_corpus_json: '" + path.string() + "' is not valid JSON: " + e.what());
    }
    Corpus corpus;
    corpus.source_path = doc.at("source_path").get<std::string>();
    corpus.sample_rate = doc.at("sample_rate").get<int>();
    corpus.segment_duration_ms = doc.at("segment_duration_ms").get<int>();
    corpus.codebook_id = doc.at("codebook_id").get<std::string>();
    int index = 0;
    for (const auto& e : doc.at("entries")) {
        CorpusEntry entry;
        entry.span.start = e.at("start").get<std::int64_t>();
        entry.span.length = e.at("length").get<std::int64_t>();
        entry.span.index = index++;
        entry.label = e.at("label").get<int>();
        corpus.entries.push_back(entry);
    }
    return corpus;
}

} // namespace stemlink::action

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace xraygan {

struct StudyRecord {
    std::string study_id;
    std::string patient_id;
    std::string report_text;
    std::string frontal_path;
    std::string lateral_path;
};

// Tokenized report: a rectangular id matrix per report. All sentences are
// padded to the longest one; `lengths` keeps the true token counts.
struct Report {
    std::vector<std::vector<std::int64_t>> sentences;
    std::vector<std::int64_t> lengths;
};

class Vocabulary {
public:
    static constexpr std::int64_t kPad = 0;
    static constexpr std::int64_t kUnk = 1;
    static constexpr std::int64_t kEos = 2;

    Vocabulary();

    // Returns the new id, or the existing one for a known token.
    std::int64_t add(const std::string& token);
    std::int64_t id(const std::string& token) const;  // kUnk when absent
    const std::string& token(std::int64_t id) const;
    bool contains(const std::string& token) const;
    std::int64_t size() const { return static_cast<std::int64_t>(id_to_token_.size()); }

private:
    std::vector<std::string> id_to_token_;
    std::map<std::string, std::int64_t> token_to_id_;
};

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

struct DatasetSplit {
    std::vector<std::string> train, val, test;
    std::uint64_t seed = 0;
};

struct TokenizeLimits {
    int max_sentences = 12;
    int max_tokens = 32;
};

// Manifest: one JSON object per line with the five StudyRecord fields.
// Image paths are resolved relative to the manifest's directory.
std::vector<StudyRecord> parse_manifest(const std::string& path);
void write_manifest(const std::string& path, const std::vector<StudyRecord>& records);

std::vector<std::string> split_sentences(const std::string& text);
std::vector<std::string> tokenize_words(const std::string& sentence);

Report tokenize_report(const std::string& text, const Vocabulary& vocab,
                       const TokenizeLimits& limits = {});

Vocabulary build_vocabulary(const std::vector<std::string>& texts, int min_freq);

// Patient-grouped split with per-split sizes equal to the rounded record
// shares (rounding remainder goes to train).
DatasetSplit split_dataset(const std::vector<StudyRecord>& records, SplitRatios ratios,
                           std::uint64_t seed);

// Writes n studies (reports plus paired frontal/lateral PNG renders of the
// same latent findings) under out_dir and returns the manifest path.
std::string generate_synthetic_corpus(std::int64_t n, std::int64_t image_size, std::uint64_t seed,
                                      const std::string& out_dir);

// Reads the lung-opacity finding back out of a report's text.
// 0 = none, 1 = left, 2 = right.
int parse_opacity_finding(const std::string& report_text);

}  // namespace xraygan

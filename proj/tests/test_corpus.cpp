#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "testutil.hpp"
#include "xraygan/corpus.hpp"
#include "xraygan/image.hpp"

using namespace xraygan;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / "xraygan-corpus-tests" / name;
    fs::remove_all(d);
    fs::create_directories(d);
    return d.string();
}

std::string write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    out << content;
    return path;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A manifest line whose image paths actually resolve.
std::string manifest_line(const std::string& dir, const std::string& study,
                          const std::string& patient, const std::string& text) {
    Image img(16, 16, -1.0);
    write_png_gray(dir + "/" + study + "_f.png", img);
    write_png_gray(dir + "/" + study + "_l.png", img);
    return "{\"study_id\":\"" + study + "\",\"patient_id\":\"" + patient +
           "\",\"report_text\":\"" + text + "\",\"frontal_path\":\"" + study +
           "_f.png\",\"lateral_path\":\"" + study + "_l.png\"}\n";
}

}  // namespace

TEST_CASE("manifest with two valid lines parses in order") {
    auto dir = fresh_dir("manifest-ok");
    std::string body = manifest_line(dir, "s1", "p1", "the lungs are clear.") +
                       manifest_line(dir, "s2", "p2", "the heart is enlarged.");
    auto path = write_text(dir + "/manifest.jsonl", body);
    auto records = parse_manifest(path);
    REQUIRE(records.size() == 2);
    CHECK(records[0].study_id == "s1");
    CHECK(records[1].study_id == "s2");
    CHECK(records[0].patient_id == "p1");
    CHECK(records[1].report_text == "the heart is enlarged.");
    CHECK(fs::path(records[0].frontal_path).is_absolute());
}

TEST_CASE("manifest line missing a field names the field and the line") {
    auto dir = fresh_dir("manifest-missing");
    std::string body = manifest_line(dir, "s1", "p1", "clear.");
    body += "{\"study_id\":\"s2\",\"patient_id\":\"p2\",\"report_text\":\"ok.\","
            "\"frontal_path\":\"s1_f.png\"}\n";
    auto path = write_text(dir + "/manifest.jsonl", body);
    try {
        parse_manifest(path);
        FAIL("expected an error");
    } catch (const std::exception& e) {
        std::string msg = e.what();
        CHECK(msg.find("lateral_path") != std::string::npos);
        CHECK(msg.find("line 2") != std::string::npos);
    }
}

TEST_CASE("duplicate study ids are rejected with the line number") {
    auto dir = fresh_dir("manifest-dup");
    std::string body = manifest_line(dir, "s1", "p1", "clear.") +
                       manifest_line(dir, "s1", "p2", "also clear.");
    auto path = write_text(dir + "/manifest.jsonl", body);
    try {
        parse_manifest(path);
        FAIL("expected an error");
    } catch (const std::exception& e) {
        std::string msg = e.what();
        CHECK(msg.find("s1") != std::string::npos);
        CHECK(msg.find("line 2") != std::string::npos);
    }
}

TEST_CASE("manifest referencing an unreadable image fails") {
    auto dir = fresh_dir("manifest-badimg");
    std::string body = "{\"study_id\":\"s1\",\"patient_id\":\"p1\",\"report_text\":\"ok.\","
                       "\"frontal_path\":\"missing_f.png\",\"lateral_path\":\"missing_l.png\"}\n";
    auto path = write_text(dir + "/manifest.jsonl", body);
    CHECK_THROWS(parse_manifest(path));
}

TEST_CASE("manifest write then parse round-trips records") {
    auto dir = fresh_dir("manifest-roundtrip");
    std::string seed_line = manifest_line(dir, "s9", "p9", "a small pleural effusion is present.");
    auto path = write_text(dir + "/manifest.jsonl", seed_line);
    auto records = parse_manifest(path);
    // Re-point to relative paths before writing, as the generator does.
    records[0].frontal_path = "s9_f.png";
    records[0].lateral_path = "s9_l.png";
    auto path2 = dir + "/manifest2.jsonl";
    write_manifest(path2, records);
    auto again = parse_manifest(path2);
    REQUIRE(again.size() == 1);
    CHECK(again[0].study_id == records[0].study_id);
    CHECK(again[0].report_text == records[0].report_text);
}

TEST_CASE("two sentence report tokenizes to the documented shape") {
    Vocabulary v;
    for (const char* w : {"heart", "size", "normal", "no", "effusion"}) v.add(w);
    Report r = tokenize_report("Heart size normal. No effusion.", v);
    REQUIRE(r.sentences.size() == 2);
    REQUIRE(r.lengths.size() == 2);
    CHECK(r.lengths[0] == 3);
    CHECK(r.lengths[1] == 2);
    CHECK(r.sentences[0][0] == v.id("heart"));
    CHECK(r.sentences[0][1] == v.id("size"));
    CHECK(r.sentences[0][2] == v.id("normal"));
    CHECK(r.sentences[1][0] == v.id("no"));
    CHECK(r.sentences[1][1] == v.id("effusion"));
    // Rows are padded to the longest sentence with PAD.
    REQUIRE(r.sentences[1].size() == r.sentences[0].size());
    CHECK(r.sentences[1][2] == Vocabulary::kPad);
}

TEST_CASE("tokens outside the vocabulary map to UNK") {
    Vocabulary v;
    v.add("heart");
    Report r = tokenize_report("Heart xyzzy.", v);
    CHECK(r.sentences[0][0] == v.id("heart"));
    CHECK(r.sentences[0][1] == Vocabulary::kUnk);
}

TEST_CASE("whitespace only reports are rejected") {
    Vocabulary v;
    CHECK_THROWS(tokenize_report("   ", v));
    CHECK_THROWS(tokenize_report("", v));
}

TEST_CASE("tokenization respects sentence and token limits") {
    Vocabulary v;
    v.add("a");
    TokenizeLimits lim;
    lim.max_sentences = 2;
    lim.max_tokens = 3;
    Report r = tokenize_report("a a a a a. a. a. a.", v, lim);
    CHECK(r.sentences.size() == 2);
    CHECK(r.lengths[0] == 3);
}

TEST_CASE("detokenizing reproduces the normalized token stream") {
    std::vector<std::string> texts = {"the heart is enlarged. no effusion is seen.",
                                      "the lungs are clear."};
    Vocabulary v = build_vocabulary(texts, 1);
    for (const auto& text : texts) {
        Report r = tokenize_report(text, v);
        std::string rebuilt;
        for (std::size_t si = 0; si < r.sentences.size(); ++si) {
            for (std::int64_t ti = 0; ti < r.lengths[si]; ++ti) {
                if (!rebuilt.empty()) rebuilt += ' ';
                rebuilt += v.token(r.sentences[si][static_cast<std::size_t>(ti)]);
            }
        }
        std::string normalized;
        for (const auto& sentence : split_sentences(text)) {
            for (const auto& word : tokenize_words(sentence)) {
                if (!normalized.empty()) normalized += ' ';
                normalized += word;
            }
        }
        CHECK(rebuilt == normalized);
    }
}

TEST_CASE("vocabulary keeps tokens that meet the frequency threshold") {
    std::vector<std::string> texts;
    for (int i = 0; i < 5; ++i) texts.push_back("opacity present.");
    texts.push_back("rare finding.");
    Vocabulary v = build_vocabulary(texts, 2);
    CHECK(v.contains("opacity"));
    CHECK(v.contains("present"));
    CHECK_FALSE(v.contains("rare"));
    Report r = tokenize_report("rare opacity.", v);
    CHECK(r.sentences[0][0] == Vocabulary::kUnk);
    CHECK(r.sentences[0][1] == v.id("opacity"));
}

TEST_CASE("vocabulary ids order by frequency then lexicographically") {
    std::vector<std::string> texts = {"zebra zebra zebra apple apple mango mango."};
    Vocabulary v = build_vocabulary(texts, 1);
    CHECK(v.id("zebra") < v.id("apple"));
    CHECK(v.id("apple") < v.id("mango"));
    CHECK(v.id("zebra") == 3);
}

TEST_CASE("empty text list yields a vocabulary of specials only") {
    Vocabulary v = build_vocabulary({}, 1);
    CHECK(v.size() == 3);
    CHECK(v.token(Vocabulary::kPad) == "<pad>");
    CHECK(v.token(Vocabulary::kUnk) == "<unk>");
}

TEST_CASE("ten records split by the documented rounding rule") {
    std::vector<StudyRecord> records;
    for (int i = 0; i < 10; ++i) {
        StudyRecord r;
        r.study_id = "s" + std::to_string(i);
        r.patient_id = "p" + std::to_string(i);
        r.report_text = "x.";
        records.push_back(r);
    }
    DatasetSplit split = split_dataset(records, SplitRatios{0.7, 0.1, 0.2}, 7);
    CHECK(split.train.size() == 7);
    CHECK(split.val.size() == 1);
    CHECK(split.test.size() == 2);
}

TEST_CASE("splits are deterministic per seed") {
    std::vector<StudyRecord> records;
    for (int i = 0; i < 20; ++i) {
        StudyRecord r;
        r.study_id = "s" + std::to_string(i);
        r.patient_id = "p" + std::to_string(i);
        records.push_back(r);
    }
    DatasetSplit a = split_dataset(records, SplitRatios{}, 3);
    DatasetSplit b = split_dataset(records, SplitRatios{}, 3);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);
    DatasetSplit c = split_dataset(records, SplitRatios{}, 4);
    CHECK((a.train != c.train || a.val != c.val || a.test != c.test));
}

TEST_CASE("splitting partitions one hundred single patient records") {
    std::vector<StudyRecord> records;
    for (int i = 0; i < 100; ++i) {
        StudyRecord r;
        r.study_id = "s" + std::to_string(i);
        r.patient_id = "p" + std::to_string(i);
        records.push_back(r);
    }
    DatasetSplit split = split_dataset(records, SplitRatios{}, 11);
    std::set<std::string> seen;
    for (const auto* part : {&split.train, &split.val, &split.test}) {
        for (const auto& id : *part) {
            CHECK(seen.insert(id).second);
        }
    }
    CHECK(seen.size() == 100);
}

TEST_CASE("patients never straddle splits") {
    std::vector<StudyRecord> records;
    for (int i = 0; i < 30; ++i) {
        StudyRecord r;
        r.study_id = "s" + std::to_string(i);
        r.patient_id = "p" + std::to_string(i / 3);
        records.push_back(r);
    }
    DatasetSplit split = split_dataset(records, SplitRatios{}, 5);
    auto owner = [&](const std::string& sid) {
        int i = std::stoi(sid.substr(1));
        return "p" + std::to_string(i / 3);
    };
    std::set<std::string> train_p, val_p, test_p;
    for (const auto& id : split.train) train_p.insert(owner(id));
    for (const auto& id : split.val) val_p.insert(owner(id));
    for (const auto& id : split.test) test_p.insert(owner(id));
    for (const auto& p : val_p) {
        CHECK_FALSE(train_p.count(p));
        CHECK_FALSE(test_p.count(p));
    }
    for (const auto& p : test_p) CHECK_FALSE(train_p.count(p));
}

TEST_CASE("fewer than three records cannot be split") {
    std::vector<StudyRecord> records(2);
    records[0].study_id = "a";
    records[0].patient_id = "pa";
    records[1].study_id = "b";
    records[1].patient_id = "pb";
    CHECK_THROWS(split_dataset(records, SplitRatios{}, 1));
}

TEST_CASE("synthetic corpus generation is byte identical per seed") {
    auto dir_a = fresh_dir("synth-a");
    auto dir_b = fresh_dir("synth-b");
    auto ma = generate_synthetic_corpus(4, 16, 1, dir_a);
    auto mb = generate_synthetic_corpus(4, 16, 1, dir_b);
    CHECK(read_bytes(ma) == read_bytes(mb));
    auto ra = parse_manifest(ma);
    auto rb = parse_manifest(mb);
    REQUIRE(ra.size() == 4);
    for (std::size_t i = 0; i < ra.size(); ++i) {
        CHECK(read_bytes(ra[i].frontal_path) == read_bytes(rb[i].frontal_path));
        CHECK(read_bytes(ra[i].lateral_path) == read_bytes(rb[i].lateral_path));
    }
}

TEST_CASE("synthetic corpus rejects degenerate sizes") {
    auto dir = fresh_dir("synth-bad");
    CHECK_THROWS(generate_synthetic_corpus(0, 16, 1, dir));
    CHECK_THROWS(generate_synthetic_corpus(4, 12, 1, dir));
    CHECK_THROWS(generate_synthetic_corpus(4, 8, 1, dir));
}

// The opacity blob is the only feature painted at exactly 0.7, so pixel
// mass at that brightness localizes it.
TEST_CASE("reported opacity side matches the rendered blob side") {
    auto dir = fresh_dir("synth-opacity");
    auto manifest = generate_synthetic_corpus(60, 32, 42, dir);
    auto records = parse_manifest(manifest);
    int checked = 0;
    for (const auto& rec : records) {
        int side = parse_opacity_finding(rec.report_text);
        Image f = read_png_gray(rec.frontal_path);
        double left = 0.0, right = 0.0;
        for (std::int64_t r = 0; r < f.h; ++r) {
            for (std::int64_t c = 0; c < f.w; ++c) {
                if (std::fabs(f.at(r, c) - 0.7) < 0.05) {
                    (c < f.w / 2 ? left : right) += 1.0;
                }
            }
        }
        if (side == 0) {
            CHECK(left + right == 0.0);
        } else if (side == 1) {
            CHECK(left > right);
            ++checked;
        } else {
            CHECK(right > left);
            ++checked;
        }
    }
    CHECK(checked >= 10);
}

TEST_CASE("parse opacity finding reads all three phrasings") {
    CHECK(parse_opacity_finding("the lungs are clear.") == 0);
    CHECK(parse_opacity_finding("there is an opacity in the left lung.") == 1);
    CHECK(parse_opacity_finding("there is an opacity in the right lung.") == 2);
}

// Finding mask: pixels at the brightness levels used for effusion,
// opacity, devices and markers. Matched views share latents, so their
// masks should correlate better than mismatched ones.
TEST_CASE("matched view finding masks correlate above mismatched ones") {
    auto dir = fresh_dir("synth-linkage");
    auto manifest = generate_synthetic_corpus(100, 32, 9, dir);
    auto records = parse_manifest(manifest);
    REQUIRE(records.size() == 100);

    auto mask = [](const Image& img) {
        std::vector<double> m(img.pixels.size());
        for (std::size_t i = 0; i < img.pixels.size(); ++i) m[i] = img.pixels[i] >= 0.45 ? 1.0 : 0.0;
        return m;
    };
    auto corr = [](const std::vector<double>& a, const std::vector<double>& b) {
        double ma = 0, mb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            ma += a[i];
            mb += b[i];
        }
        ma /= static_cast<double>(a.size());
        mb /= static_cast<double>(b.size());
        double num = 0, va = 0, vb = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            num += (a[i] - ma) * (b[i] - mb);
            va += (a[i] - ma) * (a[i] - ma);
            vb += (b[i] - mb) * (b[i] - mb);
        }
        if (va == 0.0 || vb == 0.0) return 0.0;
        return num / std::sqrt(va * vb);
    };

    std::vector<std::vector<double>> fronts, lats;
    for (const auto& rec : records) {
        fronts.push_back(mask(read_png_gray(rec.frontal_path)));
        lats.push_back(mask(read_png_gray(rec.lateral_path)));
    }
    double matched = 0.0, mismatched = 0.0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        matched += corr(fronts[i], lats[i]);
        mismatched += corr(fronts[i], lats[(i + 37) % records.size()]);
    }
    matched /= static_cast<double>(records.size());
    mismatched /= static_cast<double>(records.size());
    CHECK(matched > mismatched);
}

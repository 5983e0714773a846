#include "xraygan/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "xraygan/image.hpp"
#include "xraygan/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace xraygan {

Vocabulary::Vocabulary() {
    add("<pad>");
    add("<unk>");
    add("<eos>");
}

std::int64_t Vocabulary::add(const std::string& token) {
    auto it = token_to_id_.find(token);
    if (it != token_to_id_.end()) return it->second;
    std::int64_t nid = size();
    id_to_token_.push_back(token);
    token_to_id_.emplace(token, nid);
    return nid;
}

std::int64_t Vocabulary::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::int64_t id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("token id out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(const std::string& token) const {
    return token_to_id_.count(token) > 0;
}

namespace {

constexpr const char* kManifestFields[] = {"study_id", "patient_id", "report_text",
                                           "frontal_path", "lateral_path"};

[[noreturn]] void manifest_error(int line, const std::string& what) {
    throw std::runtime_error("manifest line " + std::to_string(line) + ": " + what);
}

std::string resolve_path(const fs::path& base, const std::string& p) {
    fs::path fp(p);
    if (fp.is_absolute()) return fp.string();
    return (base / fp).string();
}

bool blank(const std::string& s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

std::vector<StudyRecord> parse_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path);
    fs::path base = fs::path(path).parent_path();
    std::set<std::string> seen;
    std::vector<StudyRecord> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (blank(line)) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) manifest_error(lineno, "not a structured record");
        for (const char* f : kManifestFields) {
            if (!j.contains(f) || !j[f].is_string()) {
                manifest_error(lineno, std::string("missing field ") + f);
            }
        }
        StudyRecord r;
        r.study_id = j["study_id"].get<std::string>();
        r.patient_id = j["patient_id"].get<std::string>();
        r.report_text = j["report_text"].get<std::string>();
        r.frontal_path = resolve_path(base, j["frontal_path"].get<std::string>());
        r.lateral_path = resolve_path(base, j["lateral_path"].get<std::string>());
        if (blank(r.report_text)) manifest_error(lineno, "empty report_text");
        if (!seen.insert(r.study_id).second) {
            manifest_error(lineno, "duplicate study_id '" + r.study_id + "'");
        }
        for (const std::string& p : {r.frontal_path, r.lateral_path}) {
            try {
                (void)read_png_gray(p);
            } catch (const std::exception& e) {
                manifest_error(lineno, std::string("unreadable image path: ") + e.what());
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

void write_manifest(const std::string& path, const std::vector<StudyRecord>& records) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write manifest " + path);
    for (const auto& r : records) {
        json j;
        j["study_id"] = r.study_id;
        j["patient_id"] = r.patient_id;
        j["report_text"] = r.report_text;
        j["frontal_path"] = r.frontal_path;
        j["lateral_path"] = r.lateral_path;
        out << j.dump() << "\n";
    }
}

std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (ch == '.' || ch == '!' || ch == '?') {
            if (!blank(cur)) out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!blank(cur)) out.push_back(cur);
    return out;
}

std::vector<std::string> tokenize_words(const std::string& sentence) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        while (!cur.empty() && !std::isalnum(static_cast<unsigned char>(cur.front()))) cur.erase(cur.begin());
        while (!cur.empty() && !std::isalnum(static_cast<unsigned char>(cur.back()))) cur.pop_back();
        if (!cur.empty()) {
            for (char& c : cur) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            out.push_back(cur);
        }
        cur.clear();
    };
    for (char ch : sentence) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            flush();
        } else {
            cur += ch;
        }
    }
    flush();
    return out;
}

Report tokenize_report(const std::string& text, const Vocabulary& vocab,
                       const TokenizeLimits& limits) {
    Report rep;
    for (const auto& sent : split_sentences(text)) {
        if (static_cast<int>(rep.sentences.size()) >= limits.max_sentences) break;
        auto words = tokenize_words(sent);
        if (words.empty()) continue;
        std::vector<std::int64_t> ids;
        for (const auto& w : words) {
            if (static_cast<int>(ids.size()) >= limits.max_tokens) break;
            ids.push_back(vocab.id(w));
        }
        rep.lengths.push_back(static_cast<std::int64_t>(ids.size()));
        rep.sentences.push_back(std::move(ids));
    }
    if (rep.sentences.empty()) {
        throw std::invalid_argument("report text is empty after normalization");
    }
    std::int64_t width = *std::max_element(rep.lengths.begin(), rep.lengths.end());
    for (auto& s : rep.sentences) s.resize(static_cast<std::size_t>(width), Vocabulary::kPad);
    return rep;
}

Vocabulary build_vocabulary(const std::vector<std::string>& texts, int min_freq) {
    std::map<std::string, std::int64_t> freq;
    for (const auto& t : texts) {
        for (const auto& sent : split_sentences(t)) {
            for (const auto& w : tokenize_words(sent)) ++freq[w];
        }
    }
    std::vector<std::pair<std::string, std::int64_t>> items(freq.begin(), freq.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    Vocabulary v;
    for (const auto& [tok, n] : items) {
        if (n >= min_freq) v.add(tok);
    }
    return v;
}

DatasetSplit split_dataset(const std::vector<StudyRecord>& records, SplitRatios ratios,
                           std::uint64_t seed) {
    if (records.size() < 3) throw std::invalid_argument("need at least 3 records to split");
    if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0) {
        throw std::invalid_argument("split ratios must be positive");
    }
    if (std::fabs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
        throw std::invalid_argument("split ratios must sum to 1");
    }
    auto n = static_cast<std::int64_t>(records.size());
    std::int64_t n_val = std::llround(static_cast<double>(n) * ratios.val);
    std::int64_t n_test = std::llround(static_cast<double>(n) * ratios.test);

    // Patient groups in order of first appearance, then shuffled.
    std::vector<std::string> patient_order;
    std::map<std::string, std::vector<std::string>> groups;
    for (const auto& r : records) {
        auto [it, fresh] = groups.try_emplace(r.patient_id);
        if (fresh) patient_order.push_back(r.patient_id);
        it->second.push_back(r.study_id);
    }
    Rng rng(seed);
    rng.shuffle(patient_order);

    DatasetSplit split;
    split.seed = seed;
    for (const auto& pid : patient_order) {
        auto& g = groups[pid];
        auto gsz = static_cast<std::int64_t>(g.size());
        if (static_cast<std::int64_t>(split.test.size()) + gsz <= n_test) {
            split.test.insert(split.test.end(), g.begin(), g.end());
        } else if (static_cast<std::int64_t>(split.val.size()) + gsz <= n_val) {
            split.val.insert(split.val.end(), g.begin(), g.end());
        } else {
            split.train.insert(split.train.end(), g.begin(), g.end());
        }
    }
    return split;
}

namespace {

// Per-study latent findings; every field is verbalized in the report and
// rendered into both views.
struct Latents {
    bool cardiomegaly;
    int opacity;   // 0 none, 1 left, 2 right
    int effusion;  // 0 none, 1 small, 2 large
    bool device;
    bool marker;
    int habitus;   // 0 slender, 1 average, 2 broad
};

Latents draw_latents(Rng& rng) {
    Latents l;
    l.cardiomegaly = rng.bounded(2) == 1;
    l.opacity = static_cast<int>(rng.bounded(3));
    l.effusion = static_cast<int>(rng.bounded(3));
    l.device = rng.bounded(2) == 1;
    l.marker = rng.bounded(2) == 1;
    l.habitus = static_cast<int>(rng.bounded(3));
    return l;
}

std::string latents_text(const Latents& l) {
    std::string t;
    t += l.cardiomegaly ? "the heart is enlarged." : "the heart size is normal.";
    t += " ";
    if (l.opacity == 0) t += "the lungs are clear.";
    if (l.opacity == 1) t += "there is an opacity in the left lung.";
    if (l.opacity == 2) t += "there is an opacity in the right lung.";
    t += " ";
    if (l.effusion == 0) t += "no pleural effusion is seen.";
    if (l.effusion == 1) t += "a small pleural effusion is present.";
    if (l.effusion == 2) t += "a large pleural effusion is present.";
    t += " ";
    t += l.device ? "a support device projects over the chest." : "no support devices are present.";
    t += " ";
    t += l.marker ? "a radiopaque marker is present." : "no radiopaque marker is present.";
    t += " ";
    if (l.habitus == 0) t += "body habitus is slender.";
    if (l.habitus == 1) t += "body habitus is average.";
    if (l.habitus == 2) t += "body habitus is broad.";
    return t;
}

// Brightness overlay keeps features visible when they overlap.
void paint(Image& img, std::int64_t r, std::int64_t c, double v) {
    if (r < 0 || r >= img.h || c < 0 || c >= img.w) return;
    img.at(r, c) = std::max(img.at(r, c), v);
}

void fill_rect(Image& img, double r0f, double c0f, double r1f, double c1f, double v) {
    auto s = static_cast<double>(img.h);
    auto r0 = static_cast<std::int64_t>(std::lround(r0f * s));
    auto r1 = std::max(r0 + 1, static_cast<std::int64_t>(std::lround(r1f * s)));
    auto c0 = static_cast<std::int64_t>(std::lround(c0f * static_cast<double>(img.w)));
    auto c1 = std::max(c0 + 1, static_cast<std::int64_t>(std::lround(c1f * static_cast<double>(img.w))));
    for (std::int64_t r = r0; r < r1; ++r)
        for (std::int64_t c = c0; c < c1; ++c) paint(img, r, c, v);
}

void fill_ellipse(Image& img, double crf, double ccf, double rrf, double rcf, double v) {
    double s = static_cast<double>(img.h);
    double cr = crf * s, cc = ccf * static_cast<double>(img.w);
    double rr = std::max(0.75, rrf * s), rc = std::max(0.75, rcf * static_cast<double>(img.w));
    auto r0 = static_cast<std::int64_t>(std::floor(cr - rr)), r1 = static_cast<std::int64_t>(std::ceil(cr + rr));
    auto c0 = static_cast<std::int64_t>(std::floor(cc - rc)), c1 = static_cast<std::int64_t>(std::ceil(cc + rc));
    for (std::int64_t r = r0; r <= r1; ++r) {
        for (std::int64_t c = c0; c <= c1; ++c) {
            double dr = (static_cast<double>(r) + 0.5 - cr) / rr;
            double dc = (static_cast<double>(c) + 0.5 - cc) / rc;
            if (dr * dr + dc * dc <= 1.0) paint(img, r, c, v);
        }
    }
}

struct Jitter {
    double heart_r, heart_c, op_r, op_c;
};

Image render_frontal(const Latents& l, const Jitter& j, std::int64_t size) {
    Image img(size, size);
    double half_body = (0.55 + 0.15 * l.habitus) / 2.0;
    fill_rect(img, 0.08, 0.5 - half_body, 0.95, 0.5 + half_body, -0.2);
    double heart_r = l.cardiomegaly ? 0.26 : 0.16;
    fill_ellipse(img, 0.62 + j.heart_r, 0.45 + j.heart_c, 0.14, heart_r, 0.3);
    if (l.effusion > 0) {
        double h = 0.08 * l.effusion;
        fill_rect(img, 0.95 - h, 0.5 - half_body + 0.04, 0.95, 0.5 + half_body - 0.04, 0.5);
    }
    if (l.opacity > 0) {
        double cc = l.opacity == 1 ? 0.28 : 0.72;
        fill_ellipse(img, 0.30 + j.op_r, cc + j.op_c, 0.09, 0.09, 0.7);
    }
    if (l.device) fill_rect(img, 0.20, 0.575, 0.70, 0.59, 0.9);
    if (l.marker) fill_rect(img, 0.04, 0.04, 0.10, 0.10, 0.95);
    return img;
}

Image render_lateral(const Latents& l, const Jitter& j, std::int64_t size) {
    Image img(size, size);
    double half_body = (0.40 + 0.12 * l.habitus) / 2.0;
    fill_rect(img, 0.08, 0.5 - half_body, 0.95, 0.5 + half_body, -0.2);
    fill_rect(img, 0.10, 0.655, 0.90, 0.705, 0.1);
    double heart_r = l.cardiomegaly ? 0.22 : 0.13;
    fill_ellipse(img, 0.60 + j.heart_r, 0.40 + j.heart_c, 0.12, heart_r, 0.3);
    if (l.effusion > 0) {
        double h = 0.08 * l.effusion;
        fill_rect(img, 0.95 - h, 0.5 - half_body + 0.04, 0.95, 0.5 + half_body - 0.04, 0.5);
    }
    if (l.opacity > 0) {
        double cc = l.opacity == 1 ? 0.42 : 0.50;
        fill_ellipse(img, 0.32 + j.op_r, cc + j.op_c, 0.08, 0.08, 0.7);
    }
    if (l.device) fill_rect(img, 0.44, 0.30, 0.455, 0.60, 0.9);
    if (!l.marker) fill_rect(img, 0.04, 0.04, 0.10, 0.10, 0.95);
    return img;
}

std::string zero_pad(std::int64_t v, int width) {
    std::string s = std::to_string(v);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

std::string generate_synthetic_corpus(std::int64_t n, std::int64_t image_size, std::uint64_t seed,
                                      const std::string& out_dir) {
    if (n < 1) throw std::invalid_argument("corpus size must be at least 1");
    if (image_size < 16 || (image_size & (image_size - 1)) != 0) {
        throw std::invalid_argument("image_size must be a power of two >= 16");
    }
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "images", ec);
    if (ec) throw std::runtime_error("cannot create output directory " + out_dir);

    Rng root(seed);
    std::vector<StudyRecord> records;
    for (std::int64_t i = 0; i < n; ++i) {
        Rng sr = root.derive("study-" + std::to_string(i));
        Latents l = draw_latents(sr);
        Jitter j{sr.uniform(-0.02, 0.02), sr.uniform(-0.02, 0.02), sr.uniform(-0.02, 0.02),
                 sr.uniform(-0.02, 0.02)};
        std::string stem = "syn-" + zero_pad(i, 4);
        std::string front_rel = "images/" + stem + "_frontal.png";
        std::string lat_rel = "images/" + stem + "_lateral.png";
        write_png_gray((fs::path(out_dir) / front_rel).string(), render_frontal(l, j, image_size));
        write_png_gray((fs::path(out_dir) / lat_rel).string(), render_lateral(l, j, image_size));
        StudyRecord r;
        r.study_id = stem;
        r.patient_id = "pat-" + zero_pad(i, 4);
        r.report_text = latents_text(l);
        r.frontal_path = front_rel;
        r.lateral_path = lat_rel;
        records.push_back(std::move(r));
    }
    std::string manifest = (fs::path(out_dir) / "manifest.jsonl").string();
    write_manifest(manifest, records);
    return manifest;
}

int parse_opacity_finding(const std::string& report_text) {
    if (report_text.find("left lung") != std::string::npos) return 1;
    if (report_text.find("right lung") != std::string::npos) return 2;
    return 0;
}

}  // namespace xraygan

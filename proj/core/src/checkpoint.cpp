#include <cstring>
#include <fstream>
#include <stdexcept>

#include "xraygan/trainer.hpp"

// Binary checkpoint files. Fixed-width fields in host byte order: these
// artifacts promise bit-exact resume on one platform, not portability.

namespace xraygan {

namespace {

constexpr char kTrainMagic[4] = {'X', 'R', 'G', 'C'};
constexpr char kVcnMagic[4] = {'X', 'R', 'G', 'V'};
constexpr std::uint32_t kVersion = 1;

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot create checkpoint file " + path);
    }
    void raw(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void i64(std::int64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
    void tensor(const Tensor& t) {
        u32(static_cast<std::uint32_t>(t.shape().size()));
        for (std::int64_t d : t.shape()) i64(d);
        raw(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(double));
    }
    void adam(const nn::AdamState& s) {
        i64(s.t);
        u64(s.m.size());
        for (const auto& t : s.m) tensor(t);
        u64(s.v.size());
        for (const auto& t : s.v) tensor(t);
    }
    void finish(const std::string& path) {
        out_.flush();
        if (!out_) throw std::runtime_error("failed to write checkpoint file " + path);
    }

private:
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
        if (!in_) throw std::runtime_error("cannot open checkpoint file " + path);
    }
    void raw(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n)) {
            throw std::runtime_error("corrupt checkpoint (truncated): " + path_);
        }
    }
    std::uint32_t u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
    std::uint64_t u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
    std::int64_t i64() { std::int64_t v; raw(&v, sizeof v); return v; }
    double f64() { double v; raw(&v, sizeof v); return v; }
    std::string str() {
        std::uint64_t n = u64();
        if (n > (1ull << 32)) throw std::runtime_error("corrupt checkpoint (bad string): " + path_);
        std::string s(static_cast<std::size_t>(n), '\0');
        raw(s.data(), s.size());
        return s;
    }
    Tensor tensor() {
        std::uint32_t rank = u32();
        if (rank > 8) throw std::runtime_error("corrupt checkpoint (bad tensor rank): " + path_);
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) {
            std::int64_t d = i64();
            if (d < 0 || d > (1 << 24)) {
                throw std::runtime_error("corrupt checkpoint (bad tensor dim): " + path_);
            }
            shape.push_back(d);
        }
        Tensor t(shape);
        raw(t.data(), static_cast<std::size_t>(t.numel()) * sizeof(double));
        return t;
    }
    nn::AdamState adam() {
        nn::AdamState s;
        s.t = i64();
        std::uint64_t nm = u64();
        for (std::uint64_t i = 0; i < nm; ++i) s.m.push_back(tensor());
        std::uint64_t nv = u64();
        for (std::uint64_t i = 0; i < nv; ++i) s.v.push_back(tensor());
        return s;
    }
    void expect_magic(const char (&magic)[4], const char* what) {
        char got[4];
        raw(got, 4);
        if (std::memcmp(got, magic, 4) != 0) {
            throw std::runtime_error(path_ + " is not a " + what + " file");
        }
    }
    const std::string& path() const { return path_; }

private:
    std::ifstream in_;
    std::string path_;
};

void write_params(Writer& w, const nn::ParamList& ps) {
    w.u64(ps.items.size());
    for (const auto& [name, var] : ps.items) {
        w.str(name);
        w.tensor(var.value());
    }
}

void read_params(Reader& r, nn::ParamList& ps) {
    std::uint64_t n = r.u64();
    if (n != ps.items.size()) {
        throw std::runtime_error("corrupt checkpoint (parameter count mismatch): " + r.path());
    }
    for (auto& [name, var] : ps.items) {
        std::string got = r.str();
        if (got != name) {
            throw std::runtime_error("corrupt checkpoint (expected parameter " + name + ", found " +
                                     got + "): " + r.path());
        }
        Tensor t = r.tensor();
        if (!shapes_equal(t.shape(), var.shape())) {
            throw std::runtime_error("corrupt checkpoint (shape mismatch for " + name + "): " +
                                     r.path());
        }
        var.value_mut() = std::move(t);
    }
}

nn::ParamList all_train_params(const TrainState& s) {
    nn::ParamList ps;
    s.encoder.register_params(ps, "encoder");
    s.generator.register_params(ps, "generator");
    s.discriminator.register_params(ps, "discriminator");
    return ps;
}

void write_vocab(Writer& w, const Vocabulary& v) {
    w.u64(static_cast<std::uint64_t>(v.size()));
    for (std::int64_t i = 0; i < v.size(); ++i) w.str(v.token(i));
}

Vocabulary read_vocab(Reader& r) {
    Vocabulary v;
    std::uint64_t n = r.u64();
    if (n < static_cast<std::uint64_t>(v.size())) {
        throw std::runtime_error("corrupt checkpoint (vocabulary too small): " + r.path());
    }
    for (std::uint64_t i = 0; i < n; ++i) {
        std::string tok = r.str();
        if (i < static_cast<std::uint64_t>(v.size())) {
            if (tok != v.token(static_cast<std::int64_t>(i))) {
                throw std::runtime_error("corrupt checkpoint (reserved token mismatch): " + r.path());
            }
        } else if (v.add(tok) != static_cast<std::int64_t>(i)) {
            throw std::runtime_error("corrupt checkpoint (duplicate vocabulary token): " + r.path());
        }
    }
    return v;
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::string& path) {
    Writer w(path);
    w.raw(kTrainMagic, 4);
    w.u32(kVersion);
    w.u64(config_hash(state.config));
    w.str(config_to_json(state.config));
    write_vocab(w, state.vocab);
    w.u32(static_cast<std::uint32_t>(state.stages_done));
    w.i64(state.global_step);
    for (std::uint64_t word : state.rng.state()) w.u64(word);
    write_params(w, all_train_params(state));
    w.adam(state.opt_g);
    w.adam(state.opt_d);
    w.finish(path);
}

TrainState load_checkpoint(const std::string& path) {
    Reader r(path);
    r.expect_magic(kTrainMagic, "training checkpoint");
    std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + ": " +
                                 path);
    }
    std::uint64_t stored_hash = r.u64();
    TrainConfig cfg = parse_config_json(r.str());
    if (config_hash(cfg) != stored_hash) {
        throw std::runtime_error("checkpoint config hash mismatch: " + path);
    }
    Vocabulary vocab = read_vocab(r);
    TrainState state = init_train_state(cfg, vocab);
    state.stages_done = static_cast<int>(r.u32());
    state.global_step = r.i64();
    std::array<std::uint64_t, 4> rs;
    for (auto& word : rs) word = r.u64();
    state.rng.set_state(rs);
    nn::ParamList ps = all_train_params(state);
    read_params(r, ps);
    state.opt_g = r.adam();
    state.opt_d = r.adam();
    return state;
}

void save_vcn_checkpoint(const VcnParams& params, std::uint64_t cfg_hash, const std::string& path) {
    Writer w(path);
    w.raw(kVcnMagic, 4);
    w.u32(kVersion);
    w.u64(cfg_hash);
    w.u32(static_cast<std::uint32_t>(params.cfg.stage));
    w.i64(params.cfg.resolution);
    w.i64(params.cfg.width);
    w.i64(params.cfg.embed_dim);
    nn::ParamList ps;
    params.register_params(ps, "vcn");
    write_params(w, ps);
    w.finish(path);
}

VcnParams load_vcn_checkpoint(const std::string& path, const std::uint64_t* expect_hash) {
    Reader r(path);
    r.expect_magic(kVcnMagic, "scorer checkpoint");
    std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + ": " +
                                 path);
    }
    std::uint64_t stored_hash = r.u64();
    if (expect_hash && *expect_hash != stored_hash) {
        throw std::runtime_error("scorer checkpoint config hash mismatch: " + path);
    }
    VcnConfig cfg;
    cfg.stage = static_cast<int>(r.u32());
    cfg.resolution = r.i64();
    cfg.width = r.i64();
    cfg.embed_dim = r.i64();
    VcnParams params = init_vcn(cfg, 0);
    nn::ParamList ps;
    params.register_params(ps, "vcn");
    read_params(r, ps);
    return params;
}

}  // namespace xraygan

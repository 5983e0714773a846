#include "xraygan/encoder.hpp"

#include <stdexcept>

namespace xraygan {

namespace {

void validate(const EncoderConfig& c) {
    if (c.vocab_size < 1 || c.embed_dim < 1 || c.hidden_dim < 1 || c.attention_dim < 1) {
        throw std::invalid_argument("encoder dims must all be >= 1");
    }
}

// Bi-directional recurrence over the rows of x [T, in]; returns [T, 2*hidden].
ad::Var birnn(const ad::Var& x, const nn::LstmCell& fwd, const nn::LstmCell& bwd) {
    std::int64_t t_len = x.shape()[0];
    std::int64_t hidden = fwd.hidden;
    std::vector<ad::Var> hs_fwd(static_cast<std::size_t>(t_len));
    std::vector<ad::Var> hs_bwd(static_cast<std::size_t>(t_len));
    ad::Var h = ad::constant(Tensor(Shape{1, hidden}, 0.0));
    ad::Var c = h;
    for (std::int64_t t = 0; t < t_len; ++t) {
        auto [h2, c2] = fwd(ad::slice(x, 0, t, 1), h, c);
        hs_fwd[static_cast<std::size_t>(t)] = h2;
        h = h2;
        c = c2;
    }
    h = ad::constant(Tensor(Shape{1, hidden}, 0.0));
    c = h;
    for (std::int64_t t = t_len - 1; t >= 0; --t) {
        auto [h2, c2] = bwd(ad::slice(x, 0, t, 1), h, c);
        hs_bwd[static_cast<std::size_t>(t)] = h2;
        h = h2;
        c = c2;
    }
    std::vector<ad::Var> rows;
    rows.reserve(static_cast<std::size_t>(t_len));
    for (std::int64_t t = 0; t < t_len; ++t) {
        rows.push_back(ad::concat({hs_fwd[static_cast<std::size_t>(t)],
                                   hs_bwd[static_cast<std::size_t>(t)]}, 1));
    }
    return ad::concat(rows, 0);
}

// Additive attention pooling over the rows of h [T, D]:
// alpha = softmax(v . tanh(h W + b)), returns {sum_t alpha_t h_t, alpha}.
std::pair<ad::Var, ad::Var> attend(const ad::Var& h, const ad::Var& w, const ad::Var& b,
                                   const ad::Var& v) {
    std::int64_t t_len = h.shape()[0];
    ad::Var proj = ad::tanh(ad::add(ad::matmul(h, w), b));          // [T, A]
    ad::Var logits = ad::matmul(proj, ad::reshape(v, Shape{v.shape()[0], 1}));  // [T, 1]
    ad::Var alpha = ad::softmax_lastdim(ad::reshape(logits, Shape{1, t_len}));  // [1, T]
    ad::Var pooled = ad::reshape(ad::matmul(alpha, h), Shape{h.shape()[1]});
    return {pooled, alpha};
}

}  // namespace

void EncoderParams::register_params(nn::ParamList& ps, const std::string& prefix) const {
    ps.add(prefix + ".we", we);
    word_fwd.register_params(ps, prefix + ".word_fwd");
    word_bwd.register_params(ps, prefix + ".word_bwd");
    ps.add(prefix + ".vw", vw);
    ps.add(prefix + ".ww", ww);
    ps.add(prefix + ".bw", bw);
    sent_fwd.register_params(ps, prefix + ".sent_fwd");
    sent_bwd.register_params(ps, prefix + ".sent_bwd");
    ps.add(prefix + ".vs", vs);
    ps.add(prefix + ".ws", ws);
    ps.add(prefix + ".bs", bs);
}

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed) {
    validate(config);
    Rng rng(seed);
    EncoderParams p;
    p.config = config;
    std::int64_t h2 = 2 * config.hidden_dim;
    p.we = ad::param(nn::init_uniform(Shape{config.vocab_size, config.embed_dim},
                                      config.embed_dim, rng));
    p.word_fwd = nn::LstmCell(config.embed_dim, config.hidden_dim, rng);
    p.word_bwd = nn::LstmCell(config.embed_dim, config.hidden_dim, rng);
    p.vw = ad::param(nn::init_uniform(Shape{config.attention_dim}, config.attention_dim, rng));
    p.ww = ad::param(nn::init_uniform(Shape{h2, config.attention_dim}, h2, rng));
    p.bw = ad::param(Tensor(Shape{config.attention_dim}, 0.0));
    p.sent_fwd = nn::LstmCell(h2, config.hidden_dim, rng);
    p.sent_bwd = nn::LstmCell(h2, config.hidden_dim, rng);
    p.vs = ad::param(nn::init_uniform(Shape{config.attention_dim}, config.attention_dim, rng));
    p.ws = ad::param(nn::init_uniform(Shape{h2, config.attention_dim}, h2, rng));
    p.bs = ad::param(Tensor(Shape{config.attention_dim}, 0.0));
    return p;
}

SentenceEncoding encode_sentence(const std::vector<std::int64_t>& token_ids,
                                 const EncoderParams& params) {
    std::vector<std::int64_t> valid;
    for (auto id : token_ids) {
        if (id == Vocabulary::kPad) break;
        if (id < 0 || id >= params.config.vocab_size) {
            throw std::invalid_argument("token id out of vocabulary range");
        }
        valid.push_back(id);
    }
    if (valid.empty()) throw std::invalid_argument("cannot encode an empty sentence");

    ad::Var emb = ad::index_rows(params.we, valid);  // [T, E]
    ad::Var h = birnn(emb, params.word_fwd, params.word_bwd);
    auto [pooled, alpha] = attend(h, params.ww, params.bw, params.vw);
    return {pooled, alpha.value().reshaped(Shape{static_cast<std::int64_t>(valid.size())})};
}

ReportEmbedding encode_report(const Report& report, const EncoderParams& params) {
    if (report.sentences.empty()) throw std::invalid_argument("report has no sentences");
    ReportEmbedding out;
    std::vector<ad::Var> sent_rows;
    sent_rows.reserve(report.sentences.size());
    for (const auto& sent : report.sentences) {
        SentenceEncoding enc = encode_sentence(sent, params);
        sent_rows.push_back(ad::reshape(enc.vec, Shape{1, enc.vec.shape()[0]}));
        out.word_attention.push_back(std::move(enc.attention));
    }
    ad::Var sv = ad::concat(sent_rows, 0);  // [L, 2H]
    ad::Var h = birnn(sv, params.sent_fwd, params.sent_bwd);
    auto [c, alpha] = attend(h, params.ws, params.bs, params.vs);
    out.c = c;
    out.sentence_attention =
        alpha.value().reshaped(Shape{static_cast<std::int64_t>(report.sentences.size())});
    return out;
}

}  // namespace xraygan

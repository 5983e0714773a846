#pragma once

#include <cstdint>
#include <vector>

#include "xraygan/autodiff.hpp"
#include "xraygan/corpus.hpp"
#include "xraygan/nn.hpp"

namespace xraygan {

struct EncoderConfig {
    std::int64_t vocab_size = 0;
    std::int64_t embed_dim = 128;
    std::int64_t hidden_dim = 128;
    std::int64_t attention_dim = 128;
};

// Two-level encoder: a bi-directional word recurrence with additive
// attention pools each sentence, and the same construction over sentence
// vectors pools the report into c (dimension 2*hidden_dim).
struct EncoderParams {
    EncoderConfig config;
    ad::Var we;  // [vocab, embed]
    nn::LstmCell word_fwd, word_bwd;
    ad::Var vw, ww, bw;  // [attn], [2*hidden, attn], [attn]
    nn::LstmCell sent_fwd, sent_bwd;
    ad::Var vs, ws, bs;

    void register_params(nn::ParamList& ps, const std::string& prefix) const;
};

struct SentenceEncoding {
    ad::Var vec;       // [2*hidden]
    Tensor attention;  // [len], non-negative, sums to 1
};

struct ReportEmbedding {
    ad::Var c;  // [2*hidden]
    std::vector<Tensor> word_attention;
    Tensor sentence_attention;
};

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed);

// token_ids may carry PAD padding at the tail; padded positions are
// excluded from the recurrence and the attention softmax entirely, so
// padding never changes the result.
SentenceEncoding encode_sentence(const std::vector<std::int64_t>& token_ids,
                                 const EncoderParams& params);

ReportEmbedding encode_report(const Report& report, const EncoderParams& params);

}  // namespace xraygan

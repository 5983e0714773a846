#include "xraygan/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "xraygan/image.hpp"
#include "xraygan/rng.hpp"

namespace xraygan {

SyntheticFindingExtractor::SyntheticFindingExtractor(std::int64_t resolution, std::int64_t feat_dim,
                                                     std::int64_t n_classes, std::int64_t width,
                                                     std::uint64_t seed)
    : resolution_(resolution), n_classes_(n_classes) {
    if (resolution < 8 || (resolution & (resolution - 1)) != 0) {
        throw std::invalid_argument("extractor resolution must be a power of two >= 8");
    }
    if (feat_dim < 1 || n_classes < 2 || width < 1) {
        throw std::invalid_argument("extractor dims must be positive (>= 2 classes)");
    }
    Rng rng(seed);
    stem_ = nn::Conv2d(1, width, 3, 1, 1, rng);
    std::int64_t in = width;
    for (std::int64_t r = resolution; r > 4; r /= 2) {
        std::int64_t out = std::min(in * 2, width * 8);
        blocks_.emplace_back(in, out, false, 2, nn::Act::relu, rng);
        in = out;
    }
    head_ = nn::Linear(in, feat_dim, rng);
    logits_ = nn::Linear(feat_dim, n_classes, rng);
}

ad::Var SyntheticFindingExtractor::forward_features(const ad::Var& batch) const {
    ad::Var h = ad::relu(stem_(batch));
    for (const auto& b : blocks_) h = b(h);
    std::int64_t spatial = h.shape()[2] * h.shape()[3];
    ad::Var pooled = ad::mul(ad::reduce_sum(ad::reduce_sum(h, 3), 2), 1.0 / static_cast<double>(spatial));
    return ad::relu(head_(pooled));
}

Tensor SyntheticFindingExtractor::prepare(const Tensor& image) const {
    const Shape& s = image.shape();
    if (s.size() != 2 || s[0] != s[1]) {
        throw std::invalid_argument("extractor expects a square [S,S] image, got " + shape_str(s));
    }
    Tensor sized = (s[0] == resolution_) ? image : resize_pow2(image, resolution_);
    return sized.reshaped(Shape{1, 1, resolution_, resolution_});
}

Tensor SyntheticFindingExtractor::features(const Tensor& image) const {
    ad::Var x = ad::constant(prepare(image));
    return forward_features(x).value().reshaped(Shape{head_.w.shape()[1]});
}

Tensor SyntheticFindingExtractor::probabilities(const Tensor& image) const {
    ad::Var x = ad::constant(prepare(image));
    ad::Var p = ad::softmax_lastdim(logits_(forward_features(x)));
    return p.value().reshaped(Shape{n_classes_});
}

std::string SyntheticFindingExtractor::id() const {
    return "synthetic-finding-cnn/r" + std::to_string(resolution_) + "-k" + std::to_string(n_classes_);
}

std::vector<double> SyntheticFindingExtractor::train(const std::vector<Tensor>& images,
                                                     const std::vector<int>& labels, int epochs,
                                                     double lr, std::uint64_t seed) {
    if (images.empty() || images.size() != labels.size()) {
        throw std::invalid_argument("training set empty or label count mismatch");
    }
    for (int y : labels) {
        if (y < 0 || y >= n_classes_) throw std::invalid_argument("label out of range");
    }
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");

    std::vector<Tensor> prepped;
    prepped.reserve(images.size());
    for (const auto& im : images) prepped.push_back(prepare(im));

    nn::ParamList ps;
    stem_.register_params(ps, "ex.stem");
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        blocks_[i].register_params(ps, "ex.block" + std::to_string(i));
    }
    head_.register_params(ps, "ex.head");
    logits_.register_params(ps, "ex.logits");
    auto vars = ps.vars();
    nn::Adam opt;
    opt.lr = lr;
    opt.init(vars);

    Rng rng(seed);
    const std::int64_t batch = 8;
    std::int64_t r = resolution_;
    std::vector<std::size_t> order(images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<double> epoch_loss;
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(batch)) {
            std::size_t bsz = std::min(static_cast<std::size_t>(batch), order.size() - at);
            auto bs = static_cast<std::int64_t>(bsz);
            Tensor bx(Shape{bs, 1, r, r});
            Tensor onehot(Shape{bs, n_classes_}, 0.0);
            for (std::size_t b = 0; b < bsz; ++b) {
                const Tensor& im = prepped[order[at + b]];
                std::copy(im.vec().begin(), im.vec().end(),
                          bx.vec().begin() + static_cast<std::ptrdiff_t>(b * static_cast<std::size_t>(r * r)));
                onehot[static_cast<std::int64_t>(b) * n_classes_ + labels[order[at + b]]] = 1.0;
            }
            ad::Var lv = logits_(forward_features(ad::constant(bx)));  // [B,K]
            // Cross-entropy through a shifted log-sum-exp; the shift is a
            // constant so it cancels exactly in the loss value.
            Tensor shift(Shape{bs, 1});
            for (std::int64_t b = 0; b < bs; ++b) {
                double m = lv.value()[b * n_classes_];
                for (std::int64_t k = 1; k < n_classes_; ++k) {
                    m = std::max(m, lv.value()[b * n_classes_ + k]);
                }
                shift[b] = m;
            }
            ad::Var s = ad::sub(lv, ad::constant(shift));
            ad::Var lse = ad::log(ad::reduce_sum(ad::exp(s), 1));          // [B]
            ad::Var picked = ad::reduce_sum(ad::mul(s, ad::constant(onehot)), 1);  // [B]
            ad::Var loss = ad::mean(ad::sub(lse, picked));
            auto grads = ad::grad(loss, vars);
            opt.step(vars, grads);
            loss_sum += loss.value().item() * static_cast<double>(bsz);
        }
        epoch_loss.push_back(loss_sum / static_cast<double>(images.size()));
    }
    return epoch_loss;
}

std::pair<double, double> inception_score(const std::vector<Tensor>& images,
                                          const FeatureExtractor& extractor, int n_splits) {
    if (images.empty()) throw std::invalid_argument("inception score of an empty set");
    if (n_splits < 1) throw std::invalid_argument("n_splits must be >= 1");
    if (images.size() < static_cast<std::size_t>(n_splits)) {
        throw std::invalid_argument("need at least n_splits images");
    }

    std::vector<Tensor> probs;
    probs.reserve(images.size());
    for (const auto& im : images) {
        Tensor p = extractor.probabilities(im);
        double total = 0.0;
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            if (p[i] < 0.0) throw std::invalid_argument("extractor produced a negative probability");
            total += p[i];
        }
        if (std::abs(total - 1.0) > 1e-6) {
            throw std::invalid_argument("extractor probabilities do not sum to 1");
        }
        probs.push_back(std::move(p));
    }

    std::int64_t n = static_cast<std::int64_t>(probs.size());
    std::int64_t base = n / n_splits, rem = n % n_splits;
    std::int64_t k = probs[0].numel();

    std::vector<double> scores;
    std::int64_t at = 0;
    for (int s = 0; s < n_splits; ++s) {
        std::int64_t len = base + (s < rem ? 1 : 0);
        std::vector<double> marginal(static_cast<std::size_t>(k), 0.0);
        for (std::int64_t i = at; i < at + len; ++i) {
            for (std::int64_t j = 0; j < k; ++j) marginal[static_cast<std::size_t>(j)] += probs[i][j];
        }
        for (double& m : marginal) m /= static_cast<double>(len);
        double kl_sum = 0.0;
        for (std::int64_t i = at; i < at + len; ++i) {
            for (std::int64_t j = 0; j < k; ++j) {
                double p = probs[i][j];
                if (p > 0.0) kl_sum += p * (std::log(p) - std::log(marginal[static_cast<std::size_t>(j)]));
            }
        }
        scores.push_back(std::exp(kl_sum / static_cast<double>(len)));
        at += len;
    }

    double mean = 0.0;
    for (double v : scores) mean += v;
    mean /= static_cast<double>(scores.size());
    double var = 0.0;
    for (double v : scores) var += (v - mean) * (v - mean);
    var /= static_cast<double>(scores.size());
    return {mean, std::sqrt(var)};
}

namespace {

Eigen::MatrixXd to_matrix(const std::vector<Tensor>& features, const char* side) {
    if (features.size() < 2) {
        throw std::invalid_argument(std::string("fid needs >= 2 samples in set ") + side);
    }
    std::int64_t d = features[0].numel();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(features.size()), d);
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (features[i].numel() != d) {
            throw std::invalid_argument("fid feature dimension mismatch within a set");
        }
        for (std::int64_t j = 0; j < d; ++j) m(static_cast<Eigen::Index>(i), j) = features[i][j];
    }
    return m;
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (s + s.transpose()));
    Eigen::VectorXd lam = es.eigenvalues();
    for (Eigen::Index i = 0; i < lam.size(); ++i) lam(i) = std::sqrt(std::max(lam(i), 0.0));
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const std::vector<Tensor>& features_a, const std::vector<Tensor>& features_b) {
    Eigen::MatrixXd a = to_matrix(features_a, "a");
    Eigen::MatrixXd b = to_matrix(features_b, "b");
    if (a.cols() != b.cols()) throw std::invalid_argument("fid feature dimension mismatch across sets");

    Eigen::VectorXd mu_a = a.colwise().mean();
    Eigen::VectorXd mu_b = b.colwise().mean();
    Eigen::MatrixXd ca = a.rowwise() - mu_a.transpose();
    Eigen::MatrixXd cb = b.rowwise() - mu_b.transpose();
    Eigen::MatrixXd sig_a = ca.transpose() * ca / static_cast<double>(a.rows() - 1);
    Eigen::MatrixXd sig_b = cb.transpose() * cb / static_cast<double>(b.rows() - 1);

    Eigen::MatrixXd rb = psd_sqrt(sig_b);
    Eigen::MatrixXd inner = rb * sig_a * rb;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()));
    double tr_sqrt = 0.0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
        tr_sqrt += std::sqrt(std::max(es.eigenvalues()(i), 0.0));
    }
    return (mu_a - mu_b).squaredNorm() + sig_a.trace() + sig_b.trace() - 2.0 * tr_sqrt;
}

double ssim(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    if (!shapes_equal(sa, b.shape())) {
        throw std::invalid_argument("ssim shape mismatch: " + shape_str(sa) + " vs " +
                                    shape_str(b.shape()));
    }
    if (sa.size() != 2) throw std::invalid_argument("ssim expects [H,W] images, got " + shape_str(sa));
    std::int64_t h = sa[0], w = sa[1];

    std::int64_t win = std::min<std::int64_t>(11, std::min(h, w));
    if (win % 2 == 0) --win;
    if (win < 1) throw std::invalid_argument("ssim image too small");

    const double sigma = 1.5;
    std::vector<double> g(static_cast<std::size_t>(win));
    double c = static_cast<double>(win - 1) / 2.0;
    for (std::int64_t i = 0; i < win; ++i) {
        double d = static_cast<double>(i) - c;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    }
    std::vector<double> kern(static_cast<std::size_t>(win * win));
    double ksum = 0.0;
    for (std::int64_t i = 0; i < win; ++i)
        for (std::int64_t j = 0; j < win; ++j) {
            kern[static_cast<std::size_t>(i * win + j)] =
                g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
            ksum += kern[static_cast<std::size_t>(i * win + j)];
        }
    for (double& v : kern) v /= ksum;

    const double kL = 1.0;  // pixels rescaled to [0,1]
    const double c1 = (0.01 * kL) * (0.01 * kL);
    const double c2 = (0.03 * kL) * (0.03 * kL);
    auto px = [&](const Tensor& t, std::int64_t r, std::int64_t col) {
        return (t[r * w + col] + 1.0) * 0.5;
    };

    double acc = 0.0;
    std::int64_t count = 0;
    for (std::int64_t r0 = 0; r0 + win <= h; ++r0) {
        for (std::int64_t c0 = 0; c0 + win <= w; ++c0) {
            double ma = 0.0, mb = 0.0, maa = 0.0, mbb = 0.0, mab = 0.0;
            for (std::int64_t i = 0; i < win; ++i) {
                for (std::int64_t j = 0; j < win; ++j) {
                    double kv = kern[static_cast<std::size_t>(i * win + j)];
                    double va = px(a, r0 + i, c0 + j);
                    double vb = px(b, r0 + i, c0 + j);
                    ma += kv * va;
                    mb += kv * vb;
                    maa += kv * va * va;
                    mbb += kv * vb * vb;
                    mab += kv * va * vb;
                }
            }
            double var_a = maa - ma * ma;
            double var_b = mbb - mb * mb;
            double cov = mab - ma * mb;
            double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
            double den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
            acc += num / den;
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

double vc_metric(const std::vector<std::pair<Tensor, Tensor>>& pairs, const VcnParams& eval_vcn) {
    if (pairs.empty()) throw std::invalid_argument("vc metric of an empty pair set");
    double acc = 0.0;
    for (const auto& [f, l] : pairs) acc += consistency_score(f, l, eval_vcn);
    return acc / static_cast<double>(pairs.size());
}

std::string format_metric_table(const MetricReport& report) {
    char line[256];
    std::string out = "IS            FID         SSIM     VC\n";
    std::snprintf(line, sizeof(line), "%.3f +/- %.3f  %-10.3f  %-7.3f  %-7.3f\n", report.is_mean,
                  report.is_std, report.fid, report.ssim_mean, report.vc_mean);
    out += line;
    std::snprintf(line, sizeof(line), "n=%d extractor=%s\n", report.n_samples,
                  report.extractor_id.c_str());
    out += line;
    return out;
}

}  // namespace xraygan

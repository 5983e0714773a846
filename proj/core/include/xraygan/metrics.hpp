#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "xraygan/nn.hpp"
#include "xraygan/tensor.hpp"
#include "xraygan/vcn.hpp"

namespace xraygan {

// Source of features and class probabilities for IS and FID. Images are
// square [S,S] tensors in [-1,1].
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual Tensor features(const Tensor& image) const = 0;       // [feat_dim]
    virtual Tensor probabilities(const Tensor& image) const = 0;  // [n_classes], sums to 1
    virtual std::string id() const = 0;
};

// Small convolutional classifier over the bundled synthetic findings.
// Inputs at a different power-of-two side are resized to the training
// resolution first.
class SyntheticFindingExtractor : public FeatureExtractor {
public:
    SyntheticFindingExtractor(std::int64_t resolution, std::int64_t feat_dim,
                              std::int64_t n_classes, std::int64_t width, std::uint64_t seed);

    // Cross-entropy training; labels in [0, n_classes). Returns per-epoch
    // mean loss.
    std::vector<double> train(const std::vector<Tensor>& images, const std::vector<int>& labels,
                              int epochs, double lr, std::uint64_t seed);

    Tensor features(const Tensor& image) const override;
    Tensor probabilities(const Tensor& image) const override;
    std::string id() const override;

    std::int64_t resolution() const { return resolution_; }

private:
    ad::Var forward_features(const ad::Var& batch) const;  // [B,1,S,S] -> [B,feat_dim]
    Tensor prepare(const Tensor& image) const;

    std::int64_t resolution_ = 0;
    std::int64_t n_classes_ = 0;
    nn::Conv2d stem_;
    std::vector<nn::ResBlock> blocks_;
    nn::Linear head_;
    nn::Linear logits_;
};

struct MetricReport {
    double is_mean = 0.0;
    double is_std = 0.0;
    double fid = 0.0;
    double ssim_mean = 0.0;
    double vc_mean = 0.0;
    int n_samples = 0;
    std::string extractor_id;
};

// Per contiguous split: exp of the mean KL between each image's class
// distribution and the split marginal. Returns mean and population std
// over splits.
std::pair<double, double> inception_score(const std::vector<Tensor>& images,
                                          const FeatureExtractor& extractor, int n_splits);

// Squared mean distance plus the covariance trace term, with the matrix
// square root taken through the symmetrized product; slightly negative
// eigenvalues from round-off are clamped to zero. Covariances are the
// unbiased (n-1) estimates.
double fid(const std::vector<Tensor>& features_a, const std::vector<Tensor>& features_b);

// Gaussian-window structural similarity, window 11 (or the largest odd
// side that fits), sigma 1.5, valid positions only. Pixels are rescaled
// from [-1,1] to [0,1], so L = 1.
double ssim(const Tensor& a, const Tensor& b);

// Mean consistency score of (frontal, lateral) pairs under the scorer.
double vc_metric(const std::vector<std::pair<Tensor, Tensor>>& pairs, const VcnParams& eval_vcn);

// Four-column table in the order IS, FID, SSIM, VC.
std::string format_metric_table(const MetricReport& report);

}  // namespace xraygan

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "lanekeep/action_space.hpp"
#include "lanekeep/env.hpp"
#include "lanekeep/random.hpp"

namespace lanekeep::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMajorMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Substitute logit for masked actions.
inline constexpr double kMaskedLogit = -1e9;

inline constexpr int kEmbedWidth = 32;
inline constexpr int kScalarFusionWidth = 32;
inline constexpr int kPreviewBranchWidth = 128;
inline constexpr int kTrunkWidth = kPreviewBranchWidth + kScalarFusionWidth;  // 160
inline constexpr int kPreviewInput = kHistoryLen * kScalarDim + kPreviewDim;    // 36

/// Name and shape of one parameter block inside the flat parameter vector.
struct TensorInfo {
    std::string name;
    int rows;
    int cols;  // 1 for bias vectors
    Eigen::Index offset;
    Eigen::Index size() const { return static_cast<Eigen::Index>(rows) * cols; }
};

/// Affine layer view: weight (out x in, row-major) followed by bias (out).
struct AffineSlot {
    int in;
    int out;
    Eigen::Index weight;
    Eigen::Index bias;
};

template <typename Scalar>
struct ForwardCache {
    Matrix<Scalar> input;    // B x kFeatureDim
    Matrix<Scalar> embeds;   // B x 160, post-ReLU
    Matrix<Scalar> scalar;   // B x 32, post-ReLU
    Matrix<Scalar> preview;  // B x 128, post-ReLU
    Matrix<Scalar> fused;    // B x 160, [preview | scalar]
    Matrix<Scalar> trunk;    // B x 160, post-ReLU
};

template <typename Scalar>
struct NetOutput {
    Matrix<Scalar> logits;  // B x N_actions
    Matrix<Scalar> values;  // B x 1
};

/// Policy-value network with per-scalar embeddings, a scalar fusion layer,
/// a preview/history branch, a shared 160-wide trunk, and linear heads.
/// All parameters live in one contiguous vector.
template <typename Scalar>
class PolicyValueNet {
public:
    PolicyValueNet() = default;
    PolicyValueNet(int n_actions, std::uint64_t seed);

    int action_count() const { return n_actions_; }
    Eigen::Index parameter_count() const { return params_.size(); }
    const std::vector<TensorInfo>& tensors() const { return tensors_; }

    Vector<Scalar>& params() { return params_; }
    const Vector<Scalar>& params() const { return params_; }

    /// Zeroes both heads; used by tests.
    void zero_heads();

    NetOutput<Scalar> forward(const Matrix<Scalar>& input, ForwardCache<Scalar>* cache = nullptr) const;

    /// Accumulates parameter gradients into `grad` (same length as params)
    /// given upstream gradients of the logits and values. Optionally returns
    /// the gradient with respect to the input.
    void backward(const ForwardCache<Scalar>& cache, const Matrix<Scalar>& d_logits,
                  const Matrix<Scalar>& d_values, Vector<Scalar>& grad,
                  Matrix<Scalar>* d_input = nullptr) const;

    template <typename Other>
    PolicyValueNet<Other> cast() const {
        PolicyValueNet<Other> out;
        out.n_actions_ = n_actions_;
        out.tensors_ = tensors_;
        out.embed_ = embed_;
        out.fusion_ = fusion_;
        out.preview_ = preview_;
        out.trunk_ = trunk_;
        out.policy_ = policy_;
        out.value_ = value_;
        out.params_ = params_.template cast<Other>();
        return out;
    }

private:
    template <typename>
    friend class PolicyValueNet;

    AffineSlot add_affine(const std::string& name, int in, int out);
    void init_params(std::uint64_t seed);

    int n_actions_ = 0;
    std::vector<TensorInfo> tensors_;
    std::vector<AffineSlot> embed_;
    AffineSlot fusion_{}, preview_{}, trunk_{}, policy_{}, value_{};
    Vector<Scalar> params_;
};

/// Stacks observations into a B x kFeatureDim matrix.
template <typename Scalar>
Matrix<Scalar> stack_features(const std::vector<Observation>& obs);

/// Categorical distribution over the unmasked entries of one logit row.
template <typename Scalar>
class MaskedCategorical {
public:
    MaskedCategorical(const Vector<Scalar>& logits, const ActionMask& mask);

    const Vector<Scalar>& probs() const { return probs_; }
    const Vector<Scalar>& log_probs() const { return log_probs_; }
    Scalar log_prob(int action) const { return log_probs_(action); }
    Scalar entropy() const;
    int sample(Rng& rng) const;
    /// Most probable valid action; lowest index wins ties.
    int argmax() const;

private:
    ActionMask mask_;
    Vector<Scalar> log_probs_;
    Vector<Scalar> probs_;
};

/// Adam with bias correction.
template <typename Scalar>
class Adam {
public:
    Adam() = default;
    explicit Adam(Eigen::Index n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-5)
        : beta1_(beta1), beta2_(beta2), eps_(eps), m_(Vector<Scalar>::Zero(n)), v_(Vector<Scalar>::Zero(n)) {}

    void update(Vector<Scalar>& params, const Vector<Scalar>& grads, double lr);

    long step_count() const { return t_; }
    const Vector<Scalar>& first_moment() const { return m_; }
    const Vector<Scalar>& second_moment() const { return v_; }
    void restore(long t, Vector<Scalar> m, Vector<Scalar> v) {
        t_ = t;
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-5;
    long t_ = 0;
    Vector<Scalar> m_, v_;
};

extern template class PolicyValueNet<float>;
extern template class PolicyValueNet<double>;
extern template class MaskedCategorical<float>;
extern template class MaskedCategorical<double>;
extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace lanekeep::nn

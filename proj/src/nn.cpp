#include "lanekeep/nn.hpp"

#include <Eigen/QR>
#include <cmath>

#include "lanekeep/errors.hpp"

namespace lanekeep::nn {

namespace {

template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMajorMatrix<Scalar>>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMajorMatrix<Scalar>>;
template <typename Scalar>
using ConstVecMap = Eigen::Map<const Vector<Scalar>>;
template <typename Scalar>
using VecMap = Eigen::Map<Vector<Scalar>>;

template <typename Scalar>
ConstRowMap<Scalar> weight(const Vector<Scalar>& p, const AffineSlot& s) {
    return ConstRowMap<Scalar>(p.data() + s.weight, s.out, s.in);
}
template <typename Scalar>
ConstVecMap<Scalar> bias(const Vector<Scalar>& p, const AffineSlot& s) {
    return ConstVecMap<Scalar>(p.data() + s.bias, s.out);
}

template <typename Scalar, typename Derived>
Matrix<Scalar> affine(const Eigen::MatrixBase<Derived>& x, const Vector<Scalar>& p, const AffineSlot& s) {
    Matrix<Scalar> y = x * weight(p, s).transpose();
    y.rowwise() += bias(p, s).transpose();
    return y;
}

template <typename Scalar>
void relu_inplace(Matrix<Scalar>& m) {
    m = m.cwiseMax(Scalar(0));
}

// Accumulates dW += dy^T x and db += colsum(dy); returns nothing.
template <typename Scalar, typename DY, typename X>
void affine_grad(const Eigen::MatrixBase<DY>& dy, const Eigen::MatrixBase<X>& x, const AffineSlot& s,
                 Vector<Scalar>& grad) {
    RowMap<Scalar>(grad.data() + s.weight, s.out, s.in).noalias() += dy.transpose() * x;
    VecMap<Scalar>(grad.data() + s.bias, s.out) += dy.colwise().sum().transpose();
}

template <typename Scalar>
auto relu_mask(const Matrix<Scalar>& post) {
    return (post.array() > Scalar(0)).template cast<Scalar>();
}

// Orthogonal rows x cols matrix scaled by gain (semi-orthogonal when not
// square).
Eigen::MatrixXd orthogonal(int rows, int cols, double gain, Rng& rng) {
    const bool tall = rows >= cols;
    const int big = tall ? rows : cols;
    const int small = tall ? cols : rows;
    Eigen::MatrixXd a(big, small);
    for (Eigen::Index j = 0; j < a.cols(); ++j)
        for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
    const Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
    for (int j = 0; j < small; ++j)
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    return gain * (tall ? q : Eigen::MatrixXd(q.transpose()));
}

}  // namespace

template <typename Scalar>
PolicyValueNet<Scalar>::PolicyValueNet(int n_actions, std::uint64_t seed) : n_actions_(n_actions) {
    if (n_actions <= 0) throw ShapeError("network needs at least one action");
    for (int k = 0; k < kScalarDim; ++k)
        embed_.push_back(add_affine("scalar_embed." + std::to_string(k), 1, kEmbedWidth));
    fusion_ = add_affine("scalar_fusion", kScalarDim * kEmbedWidth, kScalarFusionWidth);
    preview_ = add_affine("preview_branch", kPreviewInput, kPreviewBranchWidth);
    trunk_ = add_affine("trunk", kTrunkWidth, kTrunkWidth);
    policy_ = add_affine("policy_head", kTrunkWidth, n_actions);
    value_ = add_affine("value_head", kTrunkWidth, 1);
    init_params(seed);
}

template <typename Scalar>
AffineSlot PolicyValueNet<Scalar>::add_affine(const std::string& name, int in, int out) {
    Eigen::Index offset = tensors_.empty() ? 0 : tensors_.back().offset + tensors_.back().size();
    AffineSlot slot{in, out, offset, offset + static_cast<Eigen::Index>(in) * out};
    tensors_.push_back({name + ".weight", out, in, slot.weight});
    tensors_.push_back({name + ".bias", out, 1, slot.bias});
    return slot;
}

template <typename Scalar>
void PolicyValueNet<Scalar>::init_params(std::uint64_t seed) {
    params_ = Vector<Scalar>::Zero(tensors_.back().offset + tensors_.back().size());
    Rng rng(seed);
    auto fill = [&](const AffineSlot& s, double gain) {
        RowMap<Scalar>(params_.data() + s.weight, s.out, s.in) = orthogonal(s.out, s.in, gain, rng).cast<Scalar>();
    };
    const double hidden = std::sqrt(2.0);
    for (const auto& e : embed_) fill(e, hidden);
    fill(fusion_, hidden);
    fill(preview_, hidden);
    fill(trunk_, hidden);
    fill(policy_, 0.01);
    fill(value_, 1.0);
}

template <typename Scalar>
void PolicyValueNet<Scalar>::zero_heads() {
    for (const auto* s : {&policy_, &value_}) {
        params_.segment(s->weight, static_cast<Eigen::Index>(s->in) * s->out).setZero();
        params_.segment(s->bias, s->out).setZero();
    }
}

template <typename Scalar>
NetOutput<Scalar> PolicyValueNet<Scalar>::forward(const Matrix<Scalar>& input, ForwardCache<Scalar>* cache) const {
    if (input.cols() != kFeatureDim)
        throw ShapeError("expected " + std::to_string(kFeatureDim) + " input features, got " +
                         std::to_string(input.cols()));
    const Eigen::Index batch = input.rows();

    Matrix<Scalar> embeds(batch, kScalarDim * kEmbedWidth);
    for (int k = 0; k < kScalarDim; ++k)
        embeds.middleCols(k * kEmbedWidth, kEmbedWidth) = affine<Scalar>(input.col(k), params_, embed_[k]);
    relu_inplace(embeds);

    Matrix<Scalar> scalar = affine<Scalar>(embeds, params_, fusion_);
    relu_inplace(scalar);
    Matrix<Scalar> preview = affine<Scalar>(input.rightCols(kPreviewInput), params_, preview_);
    relu_inplace(preview);

    Matrix<Scalar> fused(batch, kTrunkWidth);
    fused << preview, scalar;
    Matrix<Scalar> trunk = affine<Scalar>(fused, params_, trunk_);
    relu_inplace(trunk);

    NetOutput<Scalar> out{affine<Scalar>(trunk, params_, policy_), affine<Scalar>(trunk, params_, value_)};
    if (cache) {
        cache->input = input;
        cache->embeds = std::move(embeds);
        cache->scalar = std::move(scalar);
        cache->preview = std::move(preview);
        cache->fused = std::move(fused);
        cache->trunk = std::move(trunk);
    }
    return out;
}

template <typename Scalar>
void PolicyValueNet<Scalar>::backward(const ForwardCache<Scalar>& c, const Matrix<Scalar>& d_logits,
                                      const Matrix<Scalar>& d_values, Vector<Scalar>& grad,
                                      Matrix<Scalar>* d_input) const {
    const Eigen::Index batch = c.input.rows();
    if (d_logits.rows() != batch || d_logits.cols() != n_actions_ || d_values.rows() != batch ||
        d_values.cols() != 1)
        throw ShapeError("upstream gradient shape mismatch");
    if (grad.size() != params_.size()) throw ShapeError("gradient vector size mismatch");

    affine_grad(d_logits, c.trunk, policy_, grad);
    affine_grad(d_values, c.trunk, value_, grad);
    Matrix<Scalar> d_trunk = d_logits * weight(params_, policy_) + d_values * weight(params_, value_);
    d_trunk.array() *= relu_mask(c.trunk);

    affine_grad(d_trunk, c.fused, trunk_, grad);
    const Matrix<Scalar> d_fused = d_trunk * weight(params_, trunk_);

    Matrix<Scalar> d_preview = d_fused.leftCols(kPreviewBranchWidth);
    d_preview.array() *= relu_mask(c.preview);
    Matrix<Scalar> d_scalar = d_fused.rightCols(kScalarFusionWidth);
    d_scalar.array() *= relu_mask(c.scalar);

    affine_grad(d_preview, c.input.rightCols(kPreviewInput), preview_, grad);
    affine_grad(d_scalar, c.embeds, fusion_, grad);
    Matrix<Scalar> d_embeds = d_scalar * weight(params_, fusion_);
    d_embeds.array() *= relu_mask(c.embeds);

    for (int k = 0; k < kScalarDim; ++k)
        affine_grad(d_embeds.middleCols(k * kEmbedWidth, kEmbedWidth), c.input.col(k), embed_[k], grad);

    if (d_input) {
        d_input->setZero(batch, kFeatureDim);
        d_input->rightCols(kPreviewInput).noalias() = d_preview * weight(params_, preview_);
        for (int k = 0; k < kScalarDim; ++k)
            d_input->col(k).noalias() = d_embeds.middleCols(k * kEmbedWidth, kEmbedWidth) * weight(params_, embed_[k]);
    }
}

template <typename Scalar>
Matrix<Scalar> stack_features(const std::vector<Observation>& obs) {
    Matrix<Scalar> m(static_cast<Eigen::Index>(obs.size()), kFeatureDim);
    for (std::size_t i = 0; i < obs.size(); ++i)
        m.row(static_cast<Eigen::Index>(i)) = obs[i].features().transpose().template cast<Scalar>();
    return m;
}

template Matrix<float> stack_features<float>(const std::vector<Observation>&);
template Matrix<double> stack_features<double>(const std::vector<Observation>&);

template <typename Scalar>
MaskedCategorical<Scalar>::MaskedCategorical(const Vector<Scalar>& logits, const ActionMask& mask) : mask_(mask) {
    if (logits.size() != mask.size()) throw ShapeError("logit and mask sizes differ");
    if (!mask.any()) throw ContractViolation("action mask has no valid entries");
    Vector<Scalar> z = logits;
    for (Eigen::Index i = 0; i < z.size(); ++i)
        if (!mask[static_cast<int>(i)]) z(i) = static_cast<Scalar>(kMaskedLogit);
    const Scalar max = z.maxCoeff();
    const Scalar lse = max + std::log((z.array() - max).exp().sum());
    log_probs_ = z.array() - lse;
    probs_ = log_probs_.array().exp();
}

template <typename Scalar>
Scalar MaskedCategorical<Scalar>::entropy() const {
    Scalar h = 0;
    for (Eigen::Index i = 0; i < probs_.size(); ++i)
        if (mask_[static_cast<int>(i)]) h -= probs_(i) * log_probs_(i);
    return h;
}

template <typename Scalar>
int MaskedCategorical<Scalar>::sample(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    int last_valid = -1;
    for (Eigen::Index i = 0; i < probs_.size(); ++i) {
        if (!mask_[static_cast<int>(i)]) continue;
        last_valid = static_cast<int>(i);
        acc += static_cast<double>(probs_(i));
        if (u < acc) return last_valid;
    }
    return last_valid;
}

template <typename Scalar>
int MaskedCategorical<Scalar>::argmax() const {
    int best = -1;
    for (Eigen::Index i = 0; i < log_probs_.size(); ++i) {
        if (!mask_[static_cast<int>(i)]) continue;
        if (best < 0 || log_probs_(i) > log_probs_(best)) best = static_cast<int>(i);
    }
    return best;
}

template <typename Scalar>
void Adam<Scalar>::update(Vector<Scalar>& params, const Vector<Scalar>& grads, double lr) {
    if (params.size() != grads.size() || m_.size() != params.size()) throw ShapeError("adam size mismatch");
    ++t_;
    const auto b1 = static_cast<Scalar>(beta1_);
    const auto b2 = static_cast<Scalar>(beta2_);
    m_ = b1 * m_ + (Scalar(1) - b1) * grads;
    v_ = b2 * v_ + (Scalar(1) - b2) * grads.cwiseAbs2();
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const auto step = static_cast<Scalar>(lr / bc1);
    const auto scale = static_cast<Scalar>(1.0 / std::sqrt(bc2));
    params.array() -= step * m_.array() / (v_.array().sqrt() * scale + static_cast<Scalar>(eps_));
}

template class PolicyValueNet<float>;
template class PolicyValueNet<double>;
template class MaskedCategorical<float>;
template class MaskedCategorical<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace lanekeep::nn

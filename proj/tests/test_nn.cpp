#include <doctest.h>

#include <cmath>
#include <random>

#include "grad_check.hpp"
#include "lanekeep/errors.hpp"
#include "lanekeep/nn.hpp"

using namespace lanekeep;
using namespace lanekeep::nn;

namespace {

Matrix<double> random_input(int rows, std::mt19937_64& gen) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Matrix<double> x(rows, kFeatureDim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = u(gen);
    return x;
}

}  // namespace

TEST_CASE("parameter table layout") {
    for (int n : {6, 10, 22, 42}) {
        const PolicyValueNet<float> net(n, 1);
        const Eigen::Index expected = 5 * (32 + 32) + (160 * 32 + 32) + (36 * 128 + 128) + (160 * 160 + 160) +
                                      (160 * n + n) + (160 + 1);
        CHECK(net.parameter_count() == expected);
        CHECK(net.action_count() == n);
        Eigen::Index offset = 0;
        for (const auto& t : net.tensors()) {
            CHECK(t.offset == offset);
            offset += t.size();
        }
        CHECK(offset == expected);
        CHECK(net.tensors().front().name == "scalar_embed.0.weight");
        CHECK(net.tensors().back().name == "value_head.bias");
    }
}

TEST_CASE("orthogonal initialization with layer gains") {
    const PolicyValueNet<double> net(22, 5);
    auto weight = [&](const std::string& name) {
        for (const auto& t : net.tensors())
            if (t.name == name) {
                Matrix<double> w(t.rows, t.cols);
                for (int r = 0; r < t.rows; ++r)
                    for (int c = 0; c < t.cols; ++c) w(r, c) = net.params()(t.offset + r * t.cols + c);
                return w;
            }
        FAIL("missing tensor " << name);
        return Matrix<double>();
    };
    auto check_orthogonal = [](const Matrix<double>& w, double gain) {
        const Matrix<double> g = w.rows() <= w.cols() ? Matrix<double>(w * w.transpose()) : Matrix<double>(w.transpose() * w);
        const Matrix<double> eye = Matrix<double>::Identity(g.rows(), g.cols()) * gain * gain;
        CHECK((g - eye).cwiseAbs().maxCoeff() < 1e-9);
    };
    check_orthogonal(weight("trunk.weight"), std::sqrt(2.0));
    check_orthogonal(weight("preview_branch.weight"), std::sqrt(2.0));
    check_orthogonal(weight("scalar_fusion.weight"), std::sqrt(2.0));
    check_orthogonal(weight("scalar_embed.3.weight"), std::sqrt(2.0));
    check_orthogonal(weight("policy_head.weight"), 0.01);
    check_orthogonal(weight("value_head.weight"), 1.0);
    for (const auto& t : net.tensors())
        if (t.name.ends_with(".bias")) CHECK(net.params().segment(t.offset, t.size()).isZero());
}

TEST_CASE("forward shapes, determinism and input validation") {
    std::mt19937_64 gen(1);
    const PolicyValueNet<float> a(10, 42), b(10, 42);
    CHECK(a.params() == b.params());
    const Matrix<float> x = random_input(7, gen).cast<float>();
    const auto out = a.forward(x);
    CHECK(out.logits.rows() == 7);
    CHECK(out.logits.cols() == 10);
    CHECK(out.values.cols() == 1);
    CHECK(out.logits == b.forward(x).logits);
    // Rows are independent.
    const auto single = a.forward(x.row(3));
    CHECK((single.logits.row(0) - out.logits.row(3)).cwiseAbs().maxCoeff() < 1e-6f);
    CHECK_THROWS_AS(a.forward(Matrix<float>::Zero(2, 40)), ShapeError);
    PolicyValueNet<float> z(10, 3);
    z.zero_heads();
    CHECK(z.forward(x).logits.isZero());
}

TEST_CASE("backward matches central differences for every tensor and the input") {
    std::mt19937_64 gen(2024);
    PolicyValueNet<double> net(10, 77);
    // Move biases off zero so every layer has a non-trivial gradient.
    std::normal_distribution<double> n(0.0, 0.1);
    for (const auto& t : net.tensors())
        if (t.cols == 1)
            for (Eigen::Index i = 0; i < t.size(); ++i) net.params()(t.offset + i) = n(gen);
    const Matrix<double> x = random_input(6, gen);
    Matrix<double> g_logits(6, 10), g_values(6, 1);
    for (Eigen::Index i = 0; i < g_logits.size(); ++i) g_logits.data()[i] = n(gen) * 10;
    for (Eigen::Index i = 0; i < g_values.size(); ++i) g_values.data()[i] = n(gen) * 10;

    auto objective = [&](const PolicyValueNet<double>& m, const Matrix<double>& in) {
        const auto out = m.forward(in);
        return (out.logits.array() * g_logits.array()).sum() + (out.values.array() * g_values.array()).sum();
    };

    ForwardCache<double> cache;
    net.forward(x, &cache);
    Vector<double> grad = Vector<double>::Zero(net.parameter_count());
    Matrix<double> d_input;
    net.backward(cache, g_logits, g_values, grad, &d_input);

    auto f_params = [&](const Eigen::VectorXd& p) {
        PolicyValueNet<double> m = net;
        m.params() = p;
        return objective(m, x);
    };
    for (const auto& t : net.tensors()) {
        const double err = gradcheck::directional(f_params, net.params(), grad, t.offset, t.size(), 20, gen);
        INFO(t.name);
        CHECK(err < 1e-4);
    }
    CHECK(gradcheck::directional(f_params, net.params(), grad, 0, net.parameter_count(), 20, gen) < 1e-4);

    const Eigen::Map<const Eigen::VectorXd> x_flat(x.data(), x.size());
    const Eigen::Map<const Eigen::VectorXd> dx_flat(d_input.data(), d_input.size());
    auto f_input = [&](const Eigen::VectorXd& v) {
        return objective(net, Eigen::Map<const Matrix<double>>(v.data(), x.rows(), x.cols()));
    };
    CHECK(gradcheck::directional(f_input, x_flat, dx_flat, 0, x.size(), 20, gen) < 1e-4);

    // Gradients accumulate.
    Vector<double> twice = grad;
    net.backward(cache, g_logits, g_values, twice);
    CHECK((twice - 2 * grad).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("float and double networks agree") {
    std::mt19937_64 gen(3);
    const PolicyValueNet<float> f(22, 11);
    const PolicyValueNet<double> d = f.cast<double>();
    const Matrix<double> x = random_input(4, gen);
    const auto of = f.forward(x.cast<float>());
    const auto od = d.forward(x);
    CHECK((of.logits.cast<double>() - od.logits).cwiseAbs().maxCoeff() < 1e-5);
    CHECK((of.values.cast<double>() - od.values).cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("masked categorical") {
    Vector<double> logits(6);
    logits << 0.3, 2.0, -1.0, 5.0, 0.0, 0.7;
    ActionMask mask(6);
    for (int i : {0, 1, 2, 4, 5}) mask.set(i);
    const MaskedCategorical<double> d(logits, mask);
    CHECK(d.probs()(3) == 0.0);
    CHECK(d.probs().sum() == doctest::Approx(1.0));
    double z = 0.0;
    for (int i : {0, 1, 2, 4, 5}) z += std::exp(logits(i));
    double h = 0.0;
    for (int i : {0, 1, 2, 4, 5}) {
        const double p = std::exp(logits(i)) / z;
        CHECK(d.probs()(i) == doctest::Approx(p));
        CHECK(d.log_prob(i) == doctest::Approx(std::log(p)));
        h -= p * std::log(p);
    }
    CHECK(d.entropy() == doctest::Approx(h));
    CHECK(d.argmax() == 1);

    // Argmax is unchanged by a constant shift; ties go to the lowest index.
    const MaskedCategorical<double> shifted(Vector<double>(logits.array() + 123.0), mask);
    CHECK(shifted.argmax() == 1);
    const MaskedCategorical<double> flat(Vector<double>::Zero(6), mask);
    CHECK(flat.argmax() == 0);
    CHECK(flat.entropy() == doctest::Approx(std::log(5.0)));

    CHECK_THROWS_AS(MaskedCategorical<double>(logits, ActionMask(6)), ContractViolation);
}

TEST_CASE("masked sampling never returns a masked action and matches the probabilities") {
    std::mt19937_64 gen(17);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 4 + trial;
        Vector<float> logits(n);
        ActionMask mask(n);
        for (int i = 0; i < n; ++i) {
            logits(i) = static_cast<float>(u(gen));
            if (u(gen) > 0.0) mask.set(i);
        }
        if (!mask.any()) mask.set(n / 2);
        const MaskedCategorical<float> d(logits, mask);
        std::vector<int> counts(static_cast<std::size_t>(n), 0);
        const int samples = 5000;
        for (int s = 0; s < samples; ++s) {
            const int a = d.sample(rng);
            REQUIRE(mask[a]);
            counts[static_cast<std::size_t>(a)]++;
        }
        for (int i = 0; i < n; ++i) {
            const double p = d.probs()(i);
            const double sd = std::sqrt(p * (1 - p) / samples);
            CHECK(std::abs(counts[static_cast<std::size_t>(i)] / double(samples) - p) <= 5 * sd + 1e-12);
        }
    }
}

TEST_CASE("adam matches a scalar reference") {
    Vector<double> p(3), g(3);
    p << 1.0, -2.0, 0.5;
    Adam<double> adam(3, 0.9, 0.999, 1e-5);
    std::vector<double> ref{1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
    for (int t = 1; t <= 25; ++t) {
        g << std::sin(t), 0.1 * t, -1.0;
        adam.update(p, g, 1e-2);
        for (int i = 0; i < 3; ++i) {
            m[i] = 0.9 * m[i] + 0.1 * g(i);
            v[i] = 0.999 * v[i] + 0.001 * g(i) * g(i);
            const double mh = m[i] / (1 - std::pow(0.9, t));
            const double vh = v[i] / (1 - std::pow(0.999, t));
            ref[i] -= 1e-2 * mh / (std::sqrt(vh) + 1e-5);
        }
    }
    for (int i = 0; i < 3; ++i) CHECK(p(i) == doctest::Approx(ref[i]).epsilon(1e-12));
    CHECK(adam.step_count() == 25);
    CHECK_THROWS_AS(adam.update(p, Vector<double>::Zero(2), 1e-3), ShapeError);
}

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "grad_check.hpp"
#include "lanekeep/errors.hpp"
#include "lanekeep/ppo.hpp"
#include "oracles.hpp"

using namespace lanekeep;
using namespace lanekeep::ppo;
namespace fs = std::filesystem;

namespace {

std::vector<Route> sections() {
    const auto cat = build_route_catalog(0);
    std::vector<Route> out;
    for (RouteId id : kTrainingRouteIds) out.push_back(cat.get(id));
    return out;
}

TrainConfig tiny_config() {
    TrainConfig c;
    c.rollout_len = 256;
    c.minibatch = 64;
    c.epochs = 2;
    c.n_envs = 1;
    c.total_steps = 256 * 4;
    c.checkpoint_every = 1;
    c.seed = 11;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lanekeep_test_" + name);
    fs::remove_all(p);
    return p;
}

}  // namespace

TEST_CASE("train config defaults and derived counts") {
    TrainConfig c;
    CHECK(c.lr0 == 3e-4);
    CHECK(c.gamma == 0.99);
    CHECK(c.gae_lambda == 0.95);
    CHECK(c.minibatch == 256);
    CHECK(c.rollout_len == 8192);
    CHECK(c.epochs == 15);
    CHECK(c.clip_eps == 0.2);
    CHECK(c.ent_coef == 0.01);
    CHECK(c.vf_coef == 0.5);
    CHECK(c.total_steps == 4'000'000);
    CHECK(c.learning_rate(0.5) == doctest::Approx(1.5e-4));
    CHECK(c.learning_rate(0.0) == 3e-4);
    c.n_envs = 1;
    CHECK(c.iterations() == 488);
    c.n_envs = 4;
    CHECK(c.steps_per_iteration() == 32768);
    c.minibatch = 300;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.minibatch = 256;
    c.gamma = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("gae worked examples") {
    Eigen::VectorXd r(1), v(1), boot(1);
    r << 1.0;
    v << 0.5;
    boot << 123.0;
    auto g = compute_gae(r, v, {1}, boot, 1, 0.99, 0.95);
    CHECK(g.advantages(0) == doctest::Approx(0.5));
    CHECK(g.returns(0) == doctest::Approx(1.0));

    std::mt19937_64 gen(4);
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::VectorXd rr(30), vv(30), b1(1);
    std::vector<std::uint8_t> dd(30, 0);
    for (int t = 0; t < 30; ++t) rr(t) = n(gen), vv(t) = n(gen), dd[static_cast<std::size_t>(t)] = t % 7 == 6;
    b1 << n(gen);
    const auto td = compute_gae(rr, vv, dd, b1, 1, 0.9, 0.0);
    for (int t = 0; t < 30; ++t) {
        const double next = t + 1 < 30 ? vv(t + 1) : b1(0);
        CHECK(td.advantages(t) == doctest::Approx(rr(t) + (dd[static_cast<std::size_t>(t)] ? 0.0 : 0.9 * next) - vv(t)));
    }
}

TEST_CASE("gae recursion equals the direct sum with interleaved environments") {
    std::mt19937_64 gen(8);
    std::normal_distribution<double> n(0.0, 3.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int envs = 1 + trial % 4;
        const int steps = 1 + static_cast<int>(u(gen) * 60);
        Eigen::VectorXd r(steps * envs), v(steps * envs), boot(envs);
        std::vector<std::uint8_t> d(static_cast<std::size_t>(steps * envs));
        for (int i = 0; i < steps * envs; ++i) {
            r(i) = n(gen);
            v(i) = n(gen);
            d[static_cast<std::size_t>(i)] = u(gen) < 0.1;
        }
        for (int e = 0; e < envs; ++e) boot(e) = n(gen);
        const auto g = compute_gae(r, v, d, boot, envs, 0.99, 0.95);
        for (int e = 0; e < envs; ++e) {
            std::vector<double> rs, vs;
            std::vector<int> ds;
            for (int t = 0; t < steps; ++t) {
                rs.push_back(r(t * envs + e));
                vs.push_back(v(t * envs + e));
                ds.push_back(d[static_cast<std::size_t>(t * envs + e)]);
            }
            const auto ref = oracle::gae_direct(rs, vs, ds, boot(e), 0.99, 0.95);
            for (int t = 0; t < steps; ++t) {
                CHECK(std::abs(g.advantages(t * envs + e) - ref[static_cast<std::size_t>(t)]) < 1e-10);
                CHECK(g.returns(t * envs + e) == doctest::Approx(ref[static_cast<std::size_t>(t)] + vs[static_cast<std::size_t>(t)]));
            }
        }
    }
}

TEST_CASE("terminal steps ignore the bootstrap value") {
    Eigen::VectorXd r(3), v(3), b(1);
    r << 1, 2, 3;
    v << 0.1, 0.2, 0.3;
    b << 5.0;
    const auto a = compute_gae(r, v, {0, 0, 1}, b, 1, 0.99, 0.95);
    b << -500.0;
    const auto c = compute_gae(r, v, {0, 0, 1}, b, 1, 0.99, 0.95);
    CHECK(a.advantages == c.advantages);
    CHECK_THROWS_AS(compute_gae(r, v, {0, 0}, b, 1, 0.99, 0.95), ShapeError);
}

TEST_CASE("clipped surrogate examples") {
    CHECK(clipped_surrogate(1.5, 1.0, 0.2) == doctest::Approx(1.2));
    CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
    CHECK(clipped_surrogate(1.0, 3.0, 0.2) == doctest::Approx(3.0));
    CHECK(clipped_surrogate(0.5, 1.0, 0.2) == doctest::Approx(0.5));
}

TEST_CASE("advantage normalization uses the unbiased deviation") {
    Eigen::VectorXd a(4);
    a << 1, 2, 3, 6;
    const auto n = normalize_advantages(a);
    CHECK(n.mean() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::sqrt(n.squaredNorm() / 3.0) == doctest::Approx(1.0).epsilon(1e-6));
    Eigen::VectorXd one(1);
    one << 4.0;
    CHECK(normalize_advantages(one)(0) == 4.0);
}

TEST_CASE("ppo loss gradient matches central differences") {
    std::mt19937_64 gen(31);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    nn::PolicyValueNet<double> net(10, 5);
    for (Eigen::Index i = 0; i < net.parameter_count(); ++i)
        if (u(gen) < 0.1) net.params()(i) += 0.05 * n(gen);

    const int b = 24;
    Minibatch<double> batch;
    batch.features.resize(b, kFeatureDim);
    for (Eigen::Index i = 0; i < batch.features.size(); ++i) batch.features.data()[i] = u(gen) * 2 - 1;
    std::vector<ActionMask> masks;
    const auto cfg = build_config("Rel-0.5");
    for (int i = 0; i < b; ++i) masks.push_back(make_mask(cfg, {i % cfg.steer_count()}));
    const auto out = net.forward(batch.features);
    batch.old_log_probs.resize(b);
    batch.advantages.resize(b);
    batch.returns.resize(b);
    for (int i = 0; i < b; ++i) {
        batch.masks.push_back(&masks[static_cast<std::size_t>(i)]);
        std::vector<int> valid;
        for (int f = 0; f < 10; ++f)
            if (masks[static_cast<std::size_t>(i)][f]) valid.push_back(f);
        const int a = valid[static_cast<std::size_t>(i) % valid.size()];
        batch.actions.push_back(a);
        const nn::MaskedCategorical<double> d(out.logits.row(i).transpose(), masks[static_cast<std::size_t>(i)]);
        // Spread the ratios across and beyond the clip range.
        batch.old_log_probs(i) = d.log_prob(a) + 0.6 * n(gen);
        batch.advantages(i) = n(gen);
        batch.returns(i) = 3.0 * n(gen);
    }
    const LossWeights w{0.2, 0.5, 0.01};
    nn::Vector<double> grad = nn::Vector<double>::Zero(net.parameter_count());
    const auto stats = ppo_loss(net, batch, w, &grad);
    CHECK(stats.clip_fraction > 0.0);
    CHECK(stats.clip_fraction < 1.0);
    CHECK(stats.loss == doctest::Approx(stats.policy_loss + 0.5 * stats.value_loss - 0.01 * stats.entropy));

    auto f = [&](const Eigen::VectorXd& p) {
        nn::PolicyValueNet<double> m = net;
        m.params() = p;
        return ppo_loss<double>(m, batch, w, nullptr).loss;
    };
    CHECK(gradcheck::directional(f, net.params(), grad, 0, net.parameter_count(), 25, gen) < 1e-4);
    for (const auto& t : net.tensors()) {
        INFO(t.name);
        CHECK(gradcheck::directional(f, net.params(), grad, t.offset, t.size(), 20, gen) < 1e-4);
    }
}

TEST_CASE("collector records exactly rollout_len steps per env with valid actions") {
    const auto cfg = build_config("Dyn-1.0");
    RolloutCollector a(sections(), cfg, {}, 3, 9), b(sections(), cfg, {}, 3, 9);
    const nn::PolicyValueNet<float> net(cfg.action_count(), 1);
    RolloutBuffer ba, bb;
    const auto sa = a.collect(net, 700, ba);
    b.collect(net, 700, bb);
    CHECK(ba.size() == 2100);
    CHECK(ba.features.rows() == 2100);
    for (Eigen::Index i = 0; i < ba.size(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        CHECK(ba.masks[k][ba.actions[k]]);
    }
    CHECK(ba.actions == bb.actions);
    CHECK(ba.rewards == bb.rewards);
    CHECK(ba.features == bb.features);
    long done = 0;
    for (auto d : ba.dones) done += d;
    CHECK(static_cast<long>(sa.episodes.size()) == done);
}

TEST_CASE("ratios start at one and updates move the policy") {
    auto cfg = tiny_config();
    cfg.n_envs = 2;
    const auto space = build_config("Rel-0.5");
    nn::PolicyValueNet<float> net(space.action_count(), derive_seed(cfg.seed, 2));
    nn::Adam<float> adam(net.parameter_count());
    RolloutCollector col(sections(), space, {}, cfg.n_envs, cfg.seed);
    RolloutBuffer buf;
    col.collect(net, cfg.rollout_len, buf);
    const auto g = compute_gae(buf.rewards, buf.values, buf.dones, buf.bootstrap, cfg.n_envs, cfg.gamma, cfg.gae_lambda);
    buf.advantages = g.advantages;
    buf.returns = g.returns;
    Rng shuffle(3);
    const nn::Vector<float> before = net.params();
    UpdateStats first;
    ppo_update(net, adam, buf, cfg, 0.0, shuffle, &first);
    CHECK(first.clip_fraction == 0.0);
    CHECK(std::abs(first.approx_kl) < 1e-6);
    CHECK((net.params() - before).norm() > 0.0f);
    CHECK(adam.step_count() == cfg.epochs * cfg.steps_per_iteration() / cfg.minibatch);
}

TEST_CASE("single-env training is reproducible and writes the run layout") {
    const auto cfg = tiny_config();
    const fs::path d1 = scratch("det1"), d2 = scratch("det2");
    TrainOptions o1, o2;
    o1.run_dir = d1.string();
    o2.run_dir = d2.string();
    const auto r1 = train(ActionLabel::Fix21012, sections(), cfg, {}, o1);
    const auto r2 = train(ActionLabel::Fix21012, sections(), cfg, {}, o2);
    CHECK(r1.iterations_done == 4);
    CHECK(r1.curve.points.size() == 4);
    CHECK(r1.curve.well_formed());
    CHECK(r1.curve.points.back().step == 1024);
    CHECK(slurp(d1 / "curve.csv") == slurp(d2 / "curve.csv"));
    CHECK(r1.net.params() == r2.net.params());
    CHECK(fs::exists(d1 / "events.jsonl"));
    CHECK(fs::exists(d1 / "checkpoints" / "ckpt_1024.bin"));
    CHECK(fs::exists(d1 / "checkpoints" / "ckpt_256.bin"));
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("resuming after an interrupt reproduces the uninterrupted run") {
    auto cfg = tiny_config();
    cfg.total_steps = 256 * 5;
    cfg.checkpoint_every = 2;
    const fs::path full = scratch("full"), part = scratch("part");
    TrainOptions of;
    of.run_dir = full.string();
    const auto ref = train(ActionLabel::Rel05, sections(), cfg, {}, of);

    TrainOptions op;
    op.run_dir = part.string();
    op.stop_after_iterations = 3;  // checkpoint at 2, one more iteration lost
    const auto cut = train(ActionLabel::Rel05, sections(), cfg, {}, op);
    CHECK(cut.iterations_done == 3);
    op.stop_after_iterations = -1;
    op.resume = true;
    const auto resumed = train(ActionLabel::Rel05, sections(), cfg, {}, op);
    CHECK(resumed.iterations_done == 5);
    CHECK(slurp(full / "curve.csv") == slurp(part / "curve.csv"));
    CHECK(slurp(full / "events.jsonl") == slurp(part / "events.jsonl"));
    CHECK(resumed.net.params() == ref.net.params());
    fs::remove_all(full);
    fs::remove_all(part);

    TrainOptions none;
    none.run_dir = scratch("empty").string();
    none.resume = true;
    CHECK_THROWS_AS(train(ActionLabel::Rel05, sections(), cfg, {}, none), InputError);
}

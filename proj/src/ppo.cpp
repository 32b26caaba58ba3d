#include "lanekeep/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "lanekeep/checkpoint.hpp"
#include "lanekeep/errors.hpp"

namespace lanekeep::ppo {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
    auto require = [](bool ok, const char* what) {
        if (!ok) throw ConfigError(what);
    };
    require(lr0 > 0, "lr0 must be positive");
    require(gamma > 0 && gamma <= 1, "gamma must be in (0, 1]");
    require(gae_lambda >= 0 && gae_lambda <= 1, "gae_lambda must be in [0, 1]");
    require(minibatch > 0, "minibatch must be positive");
    require(rollout_len > 0, "rollout_len must be positive");
    require(epochs > 0, "epochs must be positive");
    require(clip_eps > 0, "clip_eps must be positive");
    require(ent_coef >= 0, "ent_coef must be non-negative");
    require(vf_coef > 0, "vf_coef must be positive");
    require(total_steps > 0, "total_steps must be positive");
    require(n_envs > 0, "n_envs must be positive");
    require(checkpoint_every > 0, "checkpoint_every must be positive");
    require(curve_window > 0, "curve_window must be positive");
    require(reward_scale > 0, "reward_scale must be positive");
    require(steps_per_iteration() % minibatch == 0, "rollout_len * n_envs must be divisible by minibatch");
}

long TrainConfig::iterations() const { return std::max(1L, total_steps / steps_per_iteration()); }

void RolloutBuffer::allocate(int steps, int envs) {
    n_steps = steps;
    n_envs = envs;
    const Eigen::Index n = size();
    features.resize(n, kFeatureDim);
    masks.assign(static_cast<std::size_t>(n), ActionMask{});
    actions.assign(static_cast<std::size_t>(n), 0);
    rewards.setZero(n);
    dones.assign(static_cast<std::size_t>(n), 0);
    values.setZero(n);
    log_probs.setZero(n);
    bootstrap.setZero(envs);
    advantages.setZero(n);
    returns.setZero(n);
}

GaeResult compute_gae(const Eigen::VectorXd& rewards, const Eigen::VectorXd& values,
                      const std::vector<std::uint8_t>& dones, const Eigen::VectorXd& bootstrap, int n_envs,
                      double gamma, double lambda) {
    const Eigen::Index n = rewards.size();
    if (n_envs <= 0 || n % n_envs != 0 || values.size() != n || static_cast<Eigen::Index>(dones.size()) != n ||
        bootstrap.size() != n_envs)
        throw ShapeError("GAE input sizes are inconsistent");
    const Eigen::Index steps = n / n_envs;
    GaeResult out{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
    for (int e = 0; e < n_envs; ++e) {
        double next_adv = 0.0;
        double next_value = bootstrap(e);
        for (Eigen::Index t = steps - 1; t >= 0; --t) {
            const Eigen::Index i = t * n_envs + e;
            const double live = dones[static_cast<std::size_t>(i)] ? 0.0 : 1.0;
            const double delta = rewards(i) + gamma * next_value * live - values(i);
            next_adv = delta + gamma * lambda * live * next_adv;
            out.advantages(i) = next_adv;
            next_value = values(i);
        }
    }
    out.returns = out.advantages + values;
    return out;
}

RolloutCollector::RolloutCollector(std::vector<Route> training_routes, const ActionSpaceConfig& config,
                                   const WorldConfig& world, int n_envs, std::uint64_t seed)
    : episode_return_(static_cast<std::size_t>(n_envs), 0.0),
      episode_length_(static_cast<std::size_t>(n_envs), 0),
      policy_rng_(derive_seed(seed, 1)) {
    envs_.reserve(static_cast<std::size_t>(n_envs));
    for (int e = 0; e < n_envs; ++e)
        envs_.emplace_back(training_routes, config, world, EnvOptions{}, derive_seed(seed, 100 + e));
}

void RolloutCollector::set_step_log(std::ostream* out) {
    if (!envs_.empty()) envs_.front().set_step_log(out);
}

RolloutStats RolloutCollector::collect(const nn::PolicyValueNet<float>& net, int n_steps, RolloutBuffer& buffer,
                                       double reward_scale) {
    const int n_envs = static_cast<int>(envs_.size());
    if (buffer.n_steps != n_steps || buffer.n_envs != n_envs) buffer.allocate(n_steps, n_envs);
    RolloutStats stats;
    nn::Matrix<float> x(n_envs, kFeatureDim);
    for (int t = 0; t < n_steps; ++t) {
        for (int e = 0; e < n_envs; ++e)
            x.row(e) = envs_[static_cast<std::size_t>(e)].observation().features().transpose().cast<float>();
        const auto out = net.forward(x);
        for (int e = 0; e < n_envs; ++e) {
            auto& env = envs_[static_cast<std::size_t>(e)];
            const Eigen::Index i = static_cast<Eigen::Index>(t) * n_envs + e;
            const auto idx = static_cast<std::size_t>(i);
            const nn::MaskedCategorical<float> dist(out.logits.row(e).transpose(), env.mask());
            const int action = dist.sample(policy_rng_);

            buffer.features.row(i) = x.row(e);
            buffer.masks[idx] = env.mask();
            buffer.actions[idx] = action;
            buffer.values(i) = out.values(e, 0);
            buffer.log_probs(i) = dist.log_prob(action);

            const StepResult r = env.step(action);
            buffer.rewards(i) = r.reward.total * reward_scale;
            buffer.dones[idx] = r.done() ? 1 : 0;
            episode_return_[static_cast<std::size_t>(e)] += r.reward.total;
            episode_length_[static_cast<std::size_t>(e)] += 1;
            if (r.done()) {
                stats.episodes.push_back(
                    {episode_return_[static_cast<std::size_t>(e)], episode_length_[static_cast<std::size_t>(e)], r.reason});
                episode_return_[static_cast<std::size_t>(e)] = 0.0;
                episode_length_[static_cast<std::size_t>(e)] = 0;
                env.reset();
            }
        }
    }
    for (int e = 0; e < n_envs; ++e)
        x.row(e) = envs_[static_cast<std::size_t>(e)].observation().features().transpose().cast<float>();
    buffer.bootstrap = net.forward(x).values.col(0).cast<double>();
    return stats;
}

RolloutCollector::Snapshot RolloutCollector::snapshot() const {
    Snapshot s;
    for (const auto& e : envs_) s.envs.push_back(e.snapshot());
    s.episode_return = episode_return_;
    s.episode_length = episode_length_;
    s.policy_rng = policy_rng_.state();
    return s;
}

void RolloutCollector::restore(const Snapshot& snap) {
    if (snap.envs.size() != envs_.size()) throw FormatError("snapshot environment count mismatch");
    for (std::size_t e = 0; e < envs_.size(); ++e) envs_[e].restore(snap.envs[e]);
    episode_return_ = snap.episode_return;
    episode_length_ = snap.episode_length;
    policy_rng_.set_state(snap.policy_rng);
}

double clipped_surrogate(double ratio, double advantage, double eps) {
    return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

Eigen::VectorXd normalize_advantages(const Eigen::VectorXd& adv) {
    if (adv.size() < 2) return adv;
    const double mean = adv.mean();
    const double var = (adv.array() - mean).square().sum() / static_cast<double>(adv.size() - 1);
    return (adv.array() - mean) / (std::sqrt(var) + 1e-8);
}

template <typename Scalar>
UpdateStats ppo_loss(const nn::PolicyValueNet<Scalar>& net, const Minibatch<Scalar>& batch, const LossWeights& w,
                     nn::Vector<Scalar>* grad) {
    nn::ForwardCache<Scalar> cache;
    const auto out = net.forward(batch.features, grad ? &cache : nullptr);
    const Eigen::Index b = out.logits.rows();
    const Eigen::Index n = out.logits.cols();
    if (static_cast<Eigen::Index>(batch.actions.size()) != b || static_cast<Eigen::Index>(batch.masks.size()) != b ||
        batch.old_log_probs.size() != b || batch.advantages.size() != b || batch.returns.size() != b)
        throw ShapeError("minibatch fields have inconsistent lengths");

    nn::Matrix<Scalar> d_logits = nn::Matrix<Scalar>::Zero(b, n);
    nn::Matrix<Scalar> d_values(b, 1);
    const double inv_b = 1.0 / static_cast<double>(b);
    UpdateStats s;
    for (Eigen::Index i = 0; i < b; ++i) {
        const ActionMask& mask = *batch.masks[static_cast<std::size_t>(i)];
        const nn::MaskedCategorical<Scalar> dist(out.logits.row(i).transpose(), mask);
        const int a = batch.actions[static_cast<std::size_t>(i)];
        if (!mask[a]) throw ContractViolation("minibatch action is masked");
        const double logp = static_cast<double>(dist.log_prob(a));
        const double ratio = std::exp(logp - batch.old_log_probs(i));
        const double adv = batch.advantages(i);
        const double unclipped = ratio * adv;
        const double clipped = std::clamp(ratio, 1.0 - w.clip_eps, 1.0 + w.clip_eps) * adv;
        s.policy_loss -= std::min(unclipped, clipped);
        const bool inside = ratio >= 1.0 - w.clip_eps && ratio <= 1.0 + w.clip_eps;
        const double d_surr = (unclipped <= clipped || inside) ? adv : 0.0;
        const double d_logp = -d_surr * ratio * inv_b;

        const double h = static_cast<double>(dist.entropy());
        s.entropy += h;
        if (grad) {
            for (Eigen::Index j = 0; j < n; ++j) {
                if (!mask[static_cast<int>(j)]) continue;
                const double p = static_cast<double>(dist.probs()(j));
                const double lp = static_cast<double>(dist.log_probs()(j));
                const double d_h = -p * (lp + h);
                d_logits(i, j) = static_cast<Scalar>(d_logp * ((j == a ? 1.0 : 0.0) - p) - w.ent_coef * inv_b * d_h);
            }
        }
        const double diff = static_cast<double>(out.values(i, 0)) - batch.returns(i);
        s.value_loss += diff * diff;
        d_values(i, 0) = static_cast<Scalar>(w.vf_coef * 2.0 * diff * inv_b);
        if (std::abs(ratio - 1.0) > w.clip_eps) s.clip_fraction += 1.0;
        s.approx_kl += (ratio - 1.0) - std::log(ratio);
    }
    s.policy_loss *= inv_b;
    s.value_loss *= inv_b;
    s.entropy *= inv_b;
    s.clip_fraction *= inv_b;
    s.approx_kl *= inv_b;
    s.loss = s.policy_loss + w.vf_coef * s.value_loss - w.ent_coef * s.entropy;
    if (!std::isfinite(s.loss)) {
        std::ostringstream os;
        os << "non-finite PPO loss (policy " << s.policy_loss << ", value " << s.value_loss << ", entropy "
           << s.entropy << ")";
        throw NumericError(os.str());
    }
    if (grad) net.backward(cache, d_logits, d_values, *grad);
    return s;
}

template UpdateStats ppo_loss<float>(const nn::PolicyValueNet<float>&, const Minibatch<float>&, const LossWeights&,
                                     nn::Vector<float>*);
template UpdateStats ppo_loss<double>(const nn::PolicyValueNet<double>&, const Minibatch<double>&,
                                      const LossWeights&, nn::Vector<double>*);

UpdateStats ppo_update(nn::PolicyValueNet<float>& net, nn::Adam<float>& adam, const RolloutBuffer& buffer,
                       const TrainConfig& cfg, double progress, Rng& shuffle_rng, UpdateStats* first_minibatch) {
    const Eigen::Index n = buffer.size();
    const Eigen::Index mb = cfg.minibatch;
    const double lr = cfg.learning_rate(progress);
    const LossWeights weights{cfg.clip_eps, cfg.vf_coef, cfg.ent_coef};

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    Minibatch<float> batch;
    batch.features.resize(mb, kFeatureDim);
    batch.actions.resize(static_cast<std::size_t>(mb));
    batch.masks.resize(static_cast<std::size_t>(mb));
    batch.old_log_probs.resize(mb);
    batch.advantages.resize(mb);
    batch.returns.resize(mb);
    nn::Vector<float> grad(net.parameter_count());

    UpdateStats total;
    long count = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (Eigen::Index i = n - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(shuffle_rng.below(static_cast<std::uint64_t>(i + 1)))]);
        for (Eigen::Index start = 0; start + mb <= n; start += mb) {
            for (Eigen::Index k = 0; k < mb; ++k) {
                const Eigen::Index src = order[static_cast<std::size_t>(start + k)];
                batch.features.row(k) = buffer.features.row(src);
                batch.actions[static_cast<std::size_t>(k)] = buffer.actions[static_cast<std::size_t>(src)];
                batch.masks[static_cast<std::size_t>(k)] = &buffer.masks[static_cast<std::size_t>(src)];
                batch.old_log_probs(k) = buffer.log_probs(src);
                batch.advantages(k) = buffer.advantages(src);
                batch.returns(k) = buffer.returns(src);
            }
            if (cfg.normalize_advantages) batch.advantages = normalize_advantages(batch.advantages);

            grad.setZero();
            const UpdateStats s = ppo_loss(net, batch, weights, &grad);
            if (first_minibatch && count == 0) *first_minibatch = s;
            if (cfg.max_grad_norm > 0) {
                const double norm = static_cast<double>(grad.norm());
                if (norm > cfg.max_grad_norm) grad *= static_cast<float>(cfg.max_grad_norm / (norm + 1e-6));
            }
            adam.update(net.params(), grad, lr);

            total.policy_loss += s.policy_loss;
            total.value_loss += s.value_loss;
            total.entropy += s.entropy;
            total.clip_fraction += s.clip_fraction;
            total.approx_kl += s.approx_kl;
            total.loss += s.loss;
            ++count;
        }
    }
    if (count > 0) {
        const double inv = 1.0 / static_cast<double>(count);
        total.policy_loss *= inv;
        total.value_loss *= inv;
        total.entropy *= inv;
        total.clip_fraction *= inv;
        total.approx_kl *= inv;
        total.loss *= inv;
    }
    return total;
}

// ---------------------------------------------------------------------------
// Training state persistence

namespace {

json vec_to_json(const nn::Vector<float>& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

nn::Vector<float> vec_from_json(const json& a, Eigen::Index expected) {
    if (static_cast<Eigen::Index>(a.size()) != expected) throw FormatError("training state vector size mismatch");
    nn::Vector<float> v(expected);
    for (Eigen::Index i = 0; i < expected; ++i) v(i) = a.at(static_cast<std::size_t>(i)).get<float>();
    return v;
}

template <typename Derived>
json mat_to_json(const Eigen::DenseBase<Derived>& m) {
    json a = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
    return a;
}

template <typename Derived>
void mat_from_json(const json& a, Eigen::DenseBase<Derived>& m) {
    if (static_cast<Eigen::Index>(a.size()) != m.rows() * m.cols()) throw FormatError("matrix size mismatch");
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = a.at(k++).get<double>();
}

json env_snapshot_to_json(const LaneEnv::Snapshot& s) {
    const EpisodeState& e = s.state;
    return json{
        {"rng", s.rng_state},
        {"route_index", s.route_index},
        {"vehicle",
         {e.vehicle.position.x(), e.vehicle.position.y(), e.vehicle.heading, e.vehicle.speed, e.vehicle.steer_cmd,
          e.vehicle.throttle_cmd}},
        {"elapsed_steps", e.vehicle.elapsed_steps},
        {"cursor", e.cursor.index},
        {"dt", e.dt},
        {"projection", {e.arc_s, e.lane_offset, e.angle_offset, e.goal_dist}},
        {"init_goal_dist", e.init_goal_dist},
        {"min_goal_dist", e.min_goal_dist},
        {"steps_since_min_improved", e.steps_since_min_improved},
        {"low_speed_steps", e.low_speed_steps},
        {"low_speed_elapsed", e.low_speed_elapsed},
        {"lane_invasions", e.lane_invasions},
        {"collided", e.collided},
        {"inside_lane", e.inside_lane},
        {"goal_bonus_paid", e.goal_bonus_paid},
        {"obs_scalars", mat_to_json(s.obs.scalars)},
        {"obs_history", mat_to_json(s.obs.history)},
        {"obs_preview", mat_to_json(s.obs.preview)},
    };
}

LaneEnv::Snapshot env_snapshot_from_json(const json& j) {
    LaneEnv::Snapshot s;
    s.rng_state = j.at("rng").get<std::string>();
    s.route_index = j.at("route_index").get<int>();
    EpisodeState& e = s.state;
    const auto& v = j.at("vehicle");
    e.vehicle.position = Vec2(v.at(0).get<double>(), v.at(1).get<double>());
    e.vehicle.heading = v.at(2).get<double>();
    e.vehicle.speed = v.at(3).get<double>();
    e.vehicle.steer_cmd = v.at(4).get<double>();
    e.vehicle.throttle_cmd = v.at(5).get<double>();
    e.vehicle.elapsed_steps = j.at("elapsed_steps").get<long>();
    e.cursor.index = j.at("cursor").get<int>();
    e.dt = j.at("dt").get<double>();
    const auto& p = j.at("projection");
    e.arc_s = p.at(0).get<double>();
    e.lane_offset = p.at(1).get<double>();
    e.angle_offset = p.at(2).get<double>();
    e.goal_dist = p.at(3).get<double>();
    e.init_goal_dist = j.at("init_goal_dist").get<double>();
    e.min_goal_dist = j.at("min_goal_dist").get<double>();
    e.steps_since_min_improved = j.at("steps_since_min_improved").get<long>();
    e.low_speed_steps = j.at("low_speed_steps").get<long>();
    e.low_speed_elapsed = j.at("low_speed_elapsed").get<double>();
    e.lane_invasions = j.at("lane_invasions").get<int>();
    e.collided = j.at("collided").get<bool>();
    e.inside_lane = j.at("inside_lane").get<bool>();
    e.goal_bonus_paid = j.at("goal_bonus_paid").get<bool>();
    mat_from_json(j.at("obs_scalars"), s.obs.scalars);
    mat_from_json(j.at("obs_history"), s.obs.history);
    mat_from_json(j.at("obs_preview"), s.obs.preview);
    return s;
}

json reward_or_null(double r) { return std::isfinite(r) ? json(r) : json(nullptr); }
double reward_from(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

struct TrainingState {
    long next_iteration = 0;
    std::deque<std::vector<double>> window;
    LearningCurve curve;
};

void write_text(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out << text;
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path latest_state_file(const fs::path& dir) {
    fs::path best;
    long best_step = -1;
    if (!fs::exists(dir)) return best;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (!name.starts_with("state_") || !name.ends_with(".json")) continue;
        const long step = std::stol(name.substr(6, name.size() - 11));
        if (step > best_step) {
            best_step = step;
            best = entry.path();
        }
    }
    return best;
}

}  // namespace

TrainResult train(ActionLabel label, const std::vector<Route>& training_routes, const TrainConfig& cfg,
                  const WorldConfig& world, const TrainOptions& opts) {
    cfg.validate();
    if (training_routes.empty()) throw ConfigError("no training routes");
    const ActionSpaceConfig config = build_config(label);

    TrainResult result;
    result.net = nn::PolicyValueNet<float>(config.action_count(), derive_seed(cfg.seed, 2));
    nn::Adam<float> adam(result.net.parameter_count());
    RolloutCollector collector(training_routes, config, world, cfg.n_envs, cfg.seed);
    Rng shuffle_rng(derive_seed(cfg.seed, 3));

    TrainingState st;
    st.curve.label = std::string(label_name(label));

    const bool persist = !opts.run_dir.empty();
    const fs::path run_dir(opts.run_dir);
    const fs::path ckpt_dir = run_dir / "checkpoints";
    std::ofstream step_log;
    if (persist) {
        std::error_code ec;
        fs::create_directories(ckpt_dir, ec);
        if (ec) throw IoError("cannot create " + ckpt_dir.string() + ": " + ec.message());
    }

    std::vector<std::string> events;
    if (persist && opts.resume) {
        const fs::path state_path = latest_state_file(ckpt_dir);
        if (state_path.empty()) throw InputError("no training state to resume in " + ckpt_dir.string());
        try {
            const json j = json::parse(read_text(state_path));
            if (j.at("label").get<std::string>() != label_name(label) || j.at("seed").get<std::uint64_t>() != cfg.seed)
                throw ConfigError("resume state does not match label/seed of the run config");
            st.next_iteration = j.at("next_iteration").get<long>();
            result.net.params() = vec_from_json(j.at("params"), result.net.parameter_count());
            const auto& ja = j.at("adam");
            adam.restore(ja.at("t").get<long>(), vec_from_json(ja.at("m"), result.net.parameter_count()),
                         vec_from_json(ja.at("v"), result.net.parameter_count()));
            shuffle_rng.set_state(j.at("shuffle_rng").get<std::string>());
            RolloutCollector::Snapshot cs;
            const auto& jc = j.at("collector");
            cs.policy_rng = jc.at("policy_rng").get<std::string>();
            cs.episode_return = jc.at("episode_return").get<std::vector<double>>();
            cs.episode_length = jc.at("episode_length").get<std::vector<long>>();
            for (const auto& je : jc.at("envs")) cs.envs.push_back(env_snapshot_from_json(je));
            collector.restore(cs);
            for (const auto& w : j.at("window")) st.window.push_back(w.get<std::vector<double>>());
            for (const auto& p : j.at("curve"))
                st.curve.points.push_back({p.at(0).get<long>(), reward_from(p.at(1))});
        } catch (const json::exception& e) {
            throw FormatError("training state " + state_path.string() + ": " + e.what());
        }
        // Drop events recorded after the restored checkpoint.
        const fs::path events_path = run_dir / "events.jsonl";
        if (fs::exists(events_path)) {
            std::istringstream lines(read_text(events_path));
            for (std::string line; std::getline(lines, line);) {
                if (line.empty()) continue;
                const json ev = json::parse(line);
                if (!ev.contains("iteration") || ev.at("iteration").get<long>() < st.next_iteration)
                    events.push_back(line);
            }
        }
    }
    if (persist && opts.log_steps) {
        step_log.open(run_dir / "steps.jsonl", opts.resume ? std::ios::app : std::ios::trunc);
        collector.set_step_log(&step_log);
    }

    auto flush_events = [&]() {
        std::string text;
        for (const auto& e : events) text += e + "\n";
        write_text(run_dir / "events.jsonl", text);
    };

    const long iterations = cfg.iterations();
    RolloutBuffer buffer;
    buffer.allocate(cfg.rollout_len, cfg.n_envs);
    long it = st.next_iteration;
    for (; it < iterations; ++it) {
        if (opts.stop_after_iterations >= 0 && it - st.next_iteration >= opts.stop_after_iterations) break;

        const RolloutStats rs = collector.collect(result.net, cfg.rollout_len, buffer, cfg.reward_scale);
        const GaeResult gae =
            compute_gae(buffer.rewards, buffer.values, buffer.dones, buffer.bootstrap, cfg.n_envs, cfg.gamma,
                        cfg.gae_lambda);
        buffer.advantages = gae.advantages;
        buffer.returns = gae.returns;

        const double progress = static_cast<double>(it) / static_cast<double>(iterations);
        const UpdateStats us = ppo_update(result.net, adam, buffer, cfg, progress, shuffle_rng);

        std::vector<double> returns;
        for (const auto& ep : rs.episodes) returns.push_back(ep.total_reward);
        st.window.push_back(returns);
        while (static_cast<int>(st.window.size()) > cfg.curve_window) st.window.pop_front();
        double sum = 0.0;
        long count = 0;
        for (const auto& w : st.window)
            for (double r : w) {
                sum += r;
                ++count;
            }
        const double smoothed = count > 0 ? sum / static_cast<double>(count) : std::numeric_limits<double>::quiet_NaN();
        const long global_step = (it + 1) * cfg.steps_per_iteration();
        st.curve.points.push_back({global_step, smoothed});

        if (opts.on_rollout) opts.on_rollout(it, buffer, rs);
        if (opts.progress) {
            *opts.progress << label_name(label) << " iter " << it + 1 << "/" << iterations << " step " << global_step
                           << " episodes " << rs.episodes.size() << " smoothed_reward " << smoothed << " entropy "
                           << us.entropy << "\n";
            opts.progress->flush();
        }

        if (persist) {
            save_curve(st.curve, (run_dir / "curve.csv").string());
            long successes = 0;
            for (const auto& ep : rs.episodes) successes += ep.reason == TerminationReason::GoalReached;
            nlohmann::ordered_json ev;
            ev["iteration"] = it;
            ev["global_step"] = global_step;
            ev["lr"] = cfg.learning_rate(progress);
            ev["episodes"] = rs.episodes.size();
            ev["goal_reached"] = successes;
            ev["mean_reward"] = reward_or_null(smoothed);
            ev["policy_loss"] = us.policy_loss;
            ev["value_loss"] = us.value_loss;
            ev["entropy"] = us.entropy;
            ev["clip_fraction"] = us.clip_fraction;
            ev["approx_kl"] = us.approx_kl;

            const bool last = it + 1 == iterations;
            if ((it + 1) % cfg.checkpoint_every == 0 || last) {
                const fs::path ckpt = ckpt_dir / ("ckpt_" + std::to_string(global_step) + ".bin");
                save_checkpoint(ckpt.string(), label, result.net);
                result.final_checkpoint = ckpt.string();

                json j;
                j["version"] = 1;
                j["label"] = label_name(label);
                j["seed"] = cfg.seed;
                j["next_iteration"] = it + 1;
                j["params"] = vec_to_json(result.net.params());
                j["adam"] = {{"t", adam.step_count()},
                             {"m", vec_to_json(adam.first_moment())},
                             {"v", vec_to_json(adam.second_moment())}};
                j["shuffle_rng"] = shuffle_rng.state();
                const auto cs = collector.snapshot();
                json envs = json::array();
                for (const auto& es : cs.envs) envs.push_back(env_snapshot_to_json(es));
                j["collector"] = {{"policy_rng", cs.policy_rng},
                                  {"episode_return", cs.episode_return},
                                  {"episode_length", cs.episode_length},
                                  {"envs", envs}};
                j["window"] = st.window;
                json curve = json::array();
                for (const auto& p : st.curve.points) curve.push_back({p.step, reward_or_null(p.mean_reward)});
                j["curve"] = curve;
                const fs::path prev = latest_state_file(ckpt_dir);
                write_text(ckpt_dir / ("state_" + std::to_string(global_step) + ".json"), j.dump());
                if (!prev.empty() && prev.filename() != fs::path("state_" + std::to_string(global_step) + ".json"))
                    fs::remove(prev);
                ev["checkpoint"] = ckpt.filename().string();
            }
            events.push_back(ev.dump());
            flush_events();
        }
    }
    result.curve = st.curve;
    result.iterations_done = it;
    result.global_step = it * cfg.steps_per_iteration();
    return result;
}

}  // namespace lanekeep::ppo

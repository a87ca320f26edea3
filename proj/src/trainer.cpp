#include "tinyquant/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tinyquant/rng.hpp"

namespace tinyquant {

void TrainConfig::validate() const {
    if (!(learning_rate > 0)) throw Error(ErrorKind::ConfigError, "learning_rate must be > 0");
    if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) {
        throw Error(ErrorKind::ConfigError, "beta1/beta2 must lie in (0,1)");
    }
    if (!(plateau_factor > 0 && plateau_factor < 1)) {
        throw Error(ErrorKind::ConfigError, "plateau_factor must lie in (0,1)");
    }
    if (plateau_patience < 1) throw Error(ErrorKind::ConfigError, "plateau_patience must be >= 1");
    if (max_epochs < 1) throw Error(ErrorKind::ConfigError, "max_epochs must be >= 1");
    if (batch_size < 1) throw Error(ErrorKind::ConfigError, "batch_size must be >= 1");
}

std::string history_to_csv(const TrainHistory& history) {
    std::ostringstream out;
    out << "epoch,train_loss,train_accuracy,val_loss,val_accuracy,learning_rate\n";
    out.precision(9);
    for (const EpochRecord& r : history.epochs) {
        out << r.epoch << ',' << r.train_loss << ',' << r.train_accuracy << ',' << r.val_loss
            << ',' << r.val_accuracy << ',' << r.learning_rate << '\n';
    }
    return out.str();
}

double bce_loss(int y, double p, double eps) {
    const double ph = std::clamp(p, eps, 1.0 - eps);
    return y == 1 ? -std::log(ph) : -std::log(1.0 - ph);
}

template <typename T>
void adam_step(ModelParamsT<T>& params, const ModelParamsT<T>& grads, AdamStateT<T>& state,
               const TrainConfig& cfg) {
    if (params.size() != grads.size() || params.size() != state.m.size() ||
        params.size() != state.v.size()) {
        throw Error(ErrorKind::ShapeMismatch, "adam_step: parameter/gradient/state layout differs");
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));

    auto update = [&](T& w, const T g, T& m, T& v) {
        m = static_cast<T>(cfg.beta1 * m + (1.0 - cfg.beta1) * g);
        v = static_cast<T>(cfg.beta2 * v + (1.0 - cfg.beta2) * (static_cast<double>(g) * g));
        const double mhat = static_cast<double>(m) / bc1;
        const double vhat = static_cast<double>(v) / bc2;
        w = static_cast<T>(w - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
    };

    for (std::size_t l = 0; l < params.size(); ++l) {
        if (!(params[l].weights.shape() == grads[l].weights.shape()) ||
            params[l].bias.size() != grads[l].bias.size()) {
            throw Error(ErrorKind::ShapeMismatch, "adam_step: gradient shape differs at layer " +
                                                      std::to_string(l));
        }
        for (std::int64_t i = 0; i < params[l].weights.size(); ++i) {
            update(params[l].weights[i], grads[l].weights[i], state.m[l].weights[i],
                   state.v[l].weights[i]);
        }
        for (std::size_t i = 0; i < params[l].bias.size(); ++i) {
            update(params[l].bias[i], grads[l].bias[i], state.m[l].bias[i], state.v[l].bias[i]);
        }
    }
}

template void adam_step<float>(ModelParamsT<float>&, const ModelParamsT<float>&,
                               AdamStateT<float>&, const TrainConfig&);
template void adam_step<double>(ModelParamsT<double>&, const ModelParamsT<double>&,
                                AdamStateT<double>&, const TrainConfig&);

double plateau_lr(const TrainHistory& history, const TrainConfig& cfg) {
    double lr = cfg.learning_rate;
    double best = -1.0;
    int stale = 0;
    for (const EpochRecord& r : history.epochs) {
        if (r.val_accuracy > best) {
            best = r.val_accuracy;
            stale = 0;
        } else if (++stale >= cfg.plateau_patience) {
            lr *= cfg.plateau_factor;
            stale = 0;
        }
    }
    return lr;
}

EvalStats evaluate_float(const Network& net, const ModelParams& params,
                         const std::vector<Sample>& samples, double loss_clamp_eps) {
    if (samples.empty()) throw Error(ErrorKind::DataError, "evaluate_float: empty dataset");
    double loss = 0.0;
    std::int64_t correct = 0;
    for (const Sample& s : samples) {
        const double p = forward(net, params, s.image, RunMode::Infer).output;
        loss += bce_loss(s.label, p, loss_clamp_eps);
        correct += (p >= 0.5 ? 1 : 0) == s.label;
    }
    const double n = static_cast<double>(samples.size());
    return EvalStats{loss / n, static_cast<double>(correct) / n};
}

TrainResult train(const TrainConfig& cfg, const NetworkConfig& net_cfg,
                  const std::vector<Sample>& train_set, const std::vector<Sample>& val_set) {
    cfg.validate();
    if (train_set.empty() || val_set.empty()) {
        throw Error(ErrorKind::DataError, "train: empty train or validation set");
    }
    for (const std::vector<Sample>* set : {&train_set, &val_set}) {
        for (const Sample& s : *set) {
            if (s.label != 0 && s.label != 1) {
                throw Error(ErrorKind::DataError,
                            "train: labels must be 0 or 1, got " + std::to_string(s.label));
            }
        }
    }

    auto [net, params] = build_network(net_cfg, cfg.seed);
    AdamState state = AdamState::zero(params);

    TrainResult result;
    result.best_params = params;
    result.best_val_accuracy = -1.0;

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const double lr = plateau_lr(result.history, cfg);
        TrainConfig step_cfg = cfg;
        step_cfg.learning_rate = lr;

        Rng shuffle_rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        std::int64_t epoch_correct = 0;
        std::uint64_t sample_ordinal = 0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(end - start);
            ModelParams grads = zero_like(params);
            double batch_loss = 0.0;

            for (std::size_t k = start; k < end; ++k) {
                const Sample& s = train_set[order[k]];
                const std::uint64_t drop_seed =
                    mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), sample_ordinal++);
                ForwardRecord<float> rec = forward(net, params, s.image, RunMode::Train, drop_seed);

                const double ph =
                    std::clamp(static_cast<double>(rec.output), cfg.loss_clamp_eps,
                               1.0 - cfg.loss_clamp_eps);
                batch_loss += bce_loss(s.label, rec.output, cfg.loss_clamp_eps);
                epoch_correct += (rec.output >= 0.5f ? 1 : 0) == s.label;

                // dL/dp of the clamped BCE, pre-scaled so the batch gradient
                // is the mean over its samples.
                const double dldp = (s.label == 1 ? -1.0 / ph : 1.0 / (1.0 - ph)) * inv_batch;
                ModelParams g = backward(net, params, rec, static_cast<float>(dldp));
                for (std::size_t l = 0; l < grads.size(); ++l) {
                    for (std::int64_t i = 0; i < grads[l].weights.size(); ++i) {
                        grads[l].weights[i] += g[l].weights[i];
                    }
                    for (std::size_t i = 0; i < grads[l].bias.size(); ++i) {
                        grads[l].bias[i] += g[l].bias[i];
                    }
                }
            }

            if (!std::isfinite(batch_loss)) {
                throw Error(ErrorKind::NumericError,
                            "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                std::to_string(start / static_cast<std::size_t>(cfg.batch_size)));
            }
            epoch_loss += batch_loss;
            adam_step(params, grads, state, step_cfg);
        }

        const EvalStats val = evaluate_float(net, params, val_set, cfg.loss_clamp_eps);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = epoch_loss / static_cast<double>(train_set.size());
        rec.train_accuracy = static_cast<double>(epoch_correct) / static_cast<double>(train_set.size());
        rec.val_loss = val.loss;
        rec.val_accuracy = val.accuracy;
        rec.learning_rate = lr;
        result.history.epochs.push_back(rec);

        if (val.accuracy > result.best_val_accuracy) {
            result.best_val_accuracy = val.accuracy;
            result.best_epoch = epoch;
            result.best_params = params;
        }
    }
    return result;
}

}  // namespace tinyquant

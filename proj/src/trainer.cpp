#include "icsad/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>

#include "text_util.hpp"

namespace icsad {

template <typename T>
void adam_step(Eigen::Matrix<T, Eigen::Dynamic, 1>& params, const Eigen::Matrix<T, Eigen::Dynamic, 1>& grads,
               AdamState<T>& state, const AdamOptions& o) {
    const Eigen::Index n = params.size();
    if (grads.size() != n || state.m.size() != n || state.v.size() != n || state.v_max.size() != n)
        throw std::invalid_argument("adam_step: size mismatch");
    for (Eigen::Index i = 0; i < n; ++i)
        if (!std::isfinite(static_cast<double>(grads[i])))
            throw NonFiniteError("non-finite gradient component " + std::to_string(i) + " (" +
                                 std::to_string(static_cast<double>(grads[i])) + ") at step " +
                                 std::to_string(state.step + 1));

    ++state.step;
    const T b1 = static_cast<T>(o.beta1), b2 = static_cast<T>(o.beta2);
    const T eps = static_cast<T>(o.epsilon), lr = static_cast<T>(o.learning_rate);
    const T wd = static_cast<T>(o.weight_decay);
    const T bc1 = T(1) - static_cast<T>(std::pow(o.beta1, static_cast<double>(state.step)));
    const T sqrt_bc2 = static_cast<T>(std::sqrt(1.0 - std::pow(o.beta2, static_cast<double>(state.step))));
    for (Eigen::Index i = 0; i < n; ++i) {
        T g = grads[i];
        if (wd != T(0)) g += wd * params[i];
        state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
        state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
        T second = state.v[i];
        if (o.amsgrad) {
            state.v_max[i] = std::max(state.v_max[i], state.v[i]);
            second = state.v_max[i];
        }
        const T denom = std::sqrt(second) / sqrt_bc2 + eps;
        params[i] -= lr * (state.m[i] / bc1) / denom;
    }
}

template void adam_step<float>(Eigen::VectorXf&, const Eigen::VectorXf&, AdamState<float>&, const AdamOptions&);
template void adam_step<double>(Eigen::VectorXd&, const Eigen::VectorXd&, AdamState<double>&, const AdamOptions&);

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (trials < 1) throw std::invalid_argument("trials must be >= 1");
    if (micro_batch < 1) throw std::invalid_argument("micro_batch must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
    if (hidden_dim < 1 || num_layers < 1) throw std::invalid_argument("hidden_dim and num_layers must be >= 1");
}

std::vector<double> TrainResult::loss_history() const {
    std::vector<double> out;
    out.reserve(history.size());
    for (const auto& e : history) out.push_back(e.mean_loss);
    return out;
}

namespace {

template <typename T>
TrainResult train_impl(const WindowSet& windows, SeqModelParams params, const TrainConfig& config,
                       const EpochCallback& on_epoch) {
    using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
    Seq2SeqNet<T> net(params.config);
    Vector w = params.values.cast<T>();
    Vector grad = Vector::Zero(w.size()), chunk_grad = Vector::Zero(w.size());
    AdamState<T> adam(w.size());
    const AdamOptions options{config.learning_rate, 0.9, 0.999, 1e-8, config.amsgrad, config.weight_decay};

    std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> order(windows.count());
    BasicWindowBatch<T> batch;

    TrainResult result;
    const auto started = std::chrono::steady_clock::now();
    const auto batch_size = static_cast<std::size_t>(config.batch_size);
    const auto micro = static_cast<std::size_t>(config.micro_batch);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);

        double loss_sum = 0.0;
        for (std::size_t first = 0; first < order.size(); first += batch_size) {
            const auto count = std::min(batch_size, order.size() - first);
            grad.setZero();
            double batch_loss = 0.0;
            for (std::size_t sub = 0; sub < count; sub += micro) {
                const auto n = std::min(micro, count - sub);
                windows.fill<T>(std::span<const std::size_t>(order).subspan(first + sub, n), batch);
                const T weight = static_cast<T>(n) / static_cast<T>(count);
                net.forward(w, batch);
                batch_loss += static_cast<double>(net.loss(batch.target)) * static_cast<double>(weight);
                chunk_grad.setZero();
                net.backward(w, batch.target, chunk_grad, weight);
                grad += chunk_grad;
            }
            if (!std::isfinite(batch_loss))
                throw NonFiniteError("non-finite training loss in epoch " + std::to_string(epoch));
            adam_step(w, grad, adam, options);
            loss_sum += batch_loss * static_cast<double>(count);
        }

        EpochReport report;
        report.epoch = epoch;
        report.mean_loss = loss_sum / static_cast<double>(order.size());
        report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        if (!std::isfinite(report.mean_loss))
            throw NonFiniteError("non-finite mean loss in epoch " + std::to_string(epoch));
        result.history.push_back(report);
        if (on_epoch) {
            params.values = w.template cast<double>();
            on_epoch(report, params);
        }
    }
    params.values = w.template cast<double>();
    if (!params.values.allFinite()) throw NonFiniteError("training produced non-finite parameters");
    result.params = std::move(params);
    return result;
}

}  // namespace

TrainResult train_model(const TagSeries& series, int process_id, const TrainConfig& config,
                        const EpochCallback& on_epoch) {
    config.validate();
    series.validate();
    if (std::find(series.labels.begin(), series.labels.end(), Label::attack) != series.labels.end())
        throw std::invalid_argument("training data contains attack-labeled rows");
    const auto tag_names = series.schema.process_tag_names(process_id);
    if (tag_names.empty()) throw std::invalid_argument("no tags for process " + std::to_string(process_id));

    const auto stats = fit_norm_stats(series);
    const auto windows = make_windows(normalize(series, stats), process_id);

    ModelConfig model;
    model.n_tags = static_cast<int>(tag_names.size());
    model.hidden_dim = config.hidden_dim;
    model.num_layers = config.num_layers;
    model.process_id = process_id;
    model.attention = config.attention;
    auto params = init_params(model, config.seed);
    params.norm_stats = stats.subset(tag_names);

    if (config.precision == Precision::f64) return train_impl<double>(windows, std::move(params), config, on_epoch);
    return train_impl<float>(windows, std::move(params), config, on_epoch);
}

BestOfResult train_best_of(const TagSeries& series, int process_id, const TrainConfig& config,
                           const TrialHook& hook, const TrialEpochCallback& on_epoch) {
    config.validate();
    const auto trials = static_cast<std::size_t>(config.trials);

    auto run_trial = [&](std::size_t t) -> std::pair<TrialOutcome, std::optional<TrainResult>> {
        TrainConfig trial_config = config;
        trial_config.seed = config.seed + t;
        if (hook) hook(trial_config, static_cast<int>(t));
        TrialOutcome outcome{trial_config.seed, std::numeric_limits<double>::infinity(), {}};
        try {
            auto result = train_model(series, process_id, trial_config,
                                      on_epoch ? on_epoch(static_cast<int>(t)) : EpochCallback{});
            outcome.final_loss = result.final_loss();
            return {outcome, std::move(result)};
        } catch (const NonFiniteError& e) {
            outcome.error = e.what();
            return {outcome, std::nullopt};
        }
    };

    std::vector<std::pair<TrialOutcome, std::optional<TrainResult>>> runs;
    if (config.parallel_trials && trials > 1) {
        std::vector<std::future<std::pair<TrialOutcome, std::optional<TrainResult>>>> futures;
        for (std::size_t t = 0; t < trials; ++t) futures.push_back(std::async(std::launch::async, run_trial, t));
        for (auto& f : futures) runs.push_back(f.get());
    } else {
        for (std::size_t t = 0; t < trials; ++t) runs.push_back(run_trial(t));
    }

    BestOfResult best;
    std::optional<std::size_t> chosen;
    for (std::size_t t = 0; t < runs.size(); ++t) {
        best.trials.push_back(runs[t].first);
        if (!runs[t].second) continue;
        if (!chosen || runs[t].first.final_loss < runs[*chosen].first.final_loss ||
            (runs[t].first.final_loss == runs[*chosen].first.final_loss &&
             runs[t].first.seed < runs[*chosen].first.seed))
            chosen = t;
    }
    if (!chosen) throw NonFiniteError("every training trial diverged");
    best.chosen = *chosen;
    best.params = std::move(runs[*chosen].second->params);
    best.history = std::move(runs[*chosen].second->history);
    return best;
}

void write_training_log(const std::filesystem::path& path, const std::vector<EpochReport>& history) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "epoch,mean_loss,wall_seconds\n";
    for (const auto& e : history)
        out << e.epoch << ',' << detail::format_double(e.mean_loss) << ',' << detail::format_double(e.wall_seconds)
            << '\n';
}

EpochCheckpointer::EpochCheckpointer(std::filesystem::path directory, std::string stem)
    : directory_(std::move(directory)), stem_(std::move(stem)) {}

std::filesystem::path EpochCheckpointer::last_path() const { return directory_ / (stem_ + ".last.ckpt"); }
std::filesystem::path EpochCheckpointer::best_path() const { return directory_ / (stem_ + ".best.ckpt"); }

void EpochCheckpointer::operator()(const EpochReport& report, const SeqModelParams& params) {
    save_checkpoint(last_path(), params);
    if (!has_best_ || report.mean_loss < best_) {
        best_ = report.mean_loss;
        has_best_ = true;
        save_checkpoint(best_path(), params);
    }
}

}  // namespace icsad

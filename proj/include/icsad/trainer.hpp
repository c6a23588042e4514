#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "icsad/dataset.hpp"
#include "icsad/seqmodel.hpp"

namespace icsad {

/// Raised when a gradient or loss stops being finite.
class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct AdamOptions {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    bool amsgrad = true;
    double weight_decay = 0.0;
};

template <typename T>
struct AdamState {
    using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

    Vector m;      // first moment
    Vector v;      // second moment
    Vector v_max;  // running max of v (amsgrad)
    long long step = 0;

    explicit AdamState(Eigen::Index size = 0)
        : m(Vector::Zero(size)), v(Vector::Zero(size)), v_max(Vector::Zero(size)) {}
};

/// One bias-corrected Adam update in place. With amsgrad the denominator uses
/// the running maximum of the second moment. Throws NonFiniteError (naming the
/// first offending index) if a gradient component is not finite; params and
/// state are left untouched in that case.
template <typename T>
void adam_step(Eigen::Matrix<T, Eigen::Dynamic, 1>& params, const Eigen::Matrix<T, Eigen::Dynamic, 1>& grads,
               AdamState<T>& state, const AdamOptions& options);

enum class Precision : std::uint8_t { f32, f64 };

struct TrainConfig {
    int epochs = 150;
    int batch_size = 4096;
    double learning_rate = 1e-3;
    int trials = 2;
    bool amsgrad = true;
    double weight_decay = 0.0;
    std::uint64_t seed = 0;
    bool shuffle = true;

    int hidden_dim = 64;
    int num_layers = 2;
    AttentionKind attention = AttentionKind::general;

    Precision precision = Precision::f32;
    /// Large batches are evaluated in chunks of at most this many windows;
    /// the accumulated gradient equals the full-batch gradient.
    int micro_batch = 512;
    /// Run best-of trials on separate threads.
    bool parallel_trials = false;

    void validate() const;
};

struct EpochReport {
    int epoch = 0;  // 1-based
    double mean_loss = 0.0;
    double wall_seconds = 0.0;
};

struct TrainResult {
    SeqModelParams params;
    std::vector<EpochReport> history;

    std::vector<double> loss_history() const;
    double final_loss() const { return history.empty() ? 0.0 : history.back().mean_loss; }
};

/// Called after every epoch with the parameters at the end of that epoch.
using EpochCallback = std::function<void(const EpochReport&, const SeqModelParams&)>;

/// Fits min-max stats on the series, then runs config.epochs passes of Adam
/// over every stride-1 window of the process in seeded shuffled batch order.
/// Throws NonFiniteError if training diverges.
TrainResult train_model(const TagSeries& series, int process_id, const TrainConfig& config,
                        const EpochCallback& on_epoch = {});

struct TrialOutcome {
    std::uint64_t seed = 0;
    double final_loss = 0.0;  // +inf when the trial diverged
    std::string error;
};

struct BestOfResult {
    SeqModelParams params;
    std::vector<EpochReport> history;  // of the chosen trial
    std::vector<TrialOutcome> trials;
    std::size_t chosen = 0;
};

/// Lets a caller adjust the configuration of an individual trial.
using TrialHook = std::function<void(TrainConfig&, int trial)>;
/// Supplies the epoch callback of an individual trial (may return an empty one).
using TrialEpochCallback = std::function<EpochCallback(int trial)>;

/// Runs config.trials independent trainings with seeds seed, seed+1, ... and
/// keeps the one with the lowest final-epoch loss (lower seed wins ties).
/// Diverged trials are recorded and skipped; throws if all of them diverge.
BestOfResult train_best_of(const TagSeries& series, int process_id, const TrainConfig& config,
                           const TrialHook& hook = {}, const TrialEpochCallback& on_epoch = {});

/// "epoch,mean_loss,wall_seconds" rows.
void write_training_log(const std::filesystem::path& path, const std::vector<EpochReport>& history);

/// Keeps <stem>.last.ckpt and <stem>.best.ckpt (lowest epoch loss so far)
/// up to date at the end of each epoch.
class EpochCheckpointer {
public:
    EpochCheckpointer(std::filesystem::path directory, std::string stem);
    void operator()(const EpochReport& report, const SeqModelParams& params);

    std::filesystem::path last_path() const;
    std::filesystem::path best_path() const;

private:
    std::filesystem::path directory_;
    std::string stem_;
    double best_ = 0.0;
    bool has_best_ = false;
};

}  // namespace icsad

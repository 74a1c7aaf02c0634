#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scl/dataset.hpp"
#include "scl/model.hpp"

namespace scl {

struct TrainConfig {
    double lr = 0.005;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t batch_size = 64;
    int epochs = 50;
    int seeds = 5;
    /// Stop after this many epochs without a new best validation accuracy; 0 disables.
    int patience = 10;
    /// Base seed: run k uses seed + k; the data split uses the base seed.
    std::uint64_t seed = 0;
    /// Omit wall-clock fields so repeated runs write identical files.
    bool deterministic = false;
    /// Directory for one checkpoint per epoch (co-evolution probes); empty disables.
    std::filesystem::path epoch_checkpoint_dir;

    void validate() const;
};

struct AdamState {
    std::vector<Tensor> m, v;
    long step = 0;
};

/// Bias-corrected Adam followed by decoupled decay p <- p * (1 - lr * wd).
/// Throws TrainingError naming the parameter when a gradient is not finite.
void adam_step(ParameterStore& params, AdamState& state, const TrainConfig& cfg);

struct Split {
    std::vector<std::size_t> train, valid, test;
};

/// Seeded shuffle of [0, n) cut by `ratios`. Throws ConfigError on an empty part
/// or ratios that do not sum to 1.
Split split_dataset(std::size_t n, std::array<double, 3> ratios, std::uint64_t seed);
/// Uses the dataset's fixed split boundaries when present (held-out experiments),
/// otherwise a 60/20/20 seeded shuffle.
Split split_for(const rpm::Dataset& ds, std::uint64_t seed);

/// Panels of the given problems as [N*16,1,P,P] ink intensities in [0,1]
/// (white background is 0). With mask_context the 8 context panels are all zero.
Tensor batch_panels(const rpm::Dataset& ds, std::span<const std::size_t> problems, bool mask_context = false);
std::vector<int> batch_answers(const rpm::Dataset& ds, std::span<const std::size_t> problems);

/// Fraction of problems whose highest-probability candidate is the answer.
double evaluate(const SCLModel& model, const rpm::Dataset& ds, std::span<const std::size_t> problems,
                bool mask_context = false, std::size_t batch = 128);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    double valid_acc = 0;
    double seconds = 0;
};

struct Metrics {
    std::uint64_t seed = 0;
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;
    double best_valid_acc = -1;
    double test_acc = 0;
    double final_train_loss = 0;
    double wall_seconds = 0;
    bool stopped_early = false;
};

struct TrainResult {
    std::vector<std::uint8_t> checkpoint;  // best-validation weights
    Metrics metrics;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// One training run: softmax cross-entropy over the answer index, training order
/// reshuffled every epoch, best-validation checkpoint kept. Throws TrainingError
/// (naming the epoch) if the loss becomes non-finite.
TrainResult train_run(const ModelConfig& model_cfg, const rpm::Dataset& ds, const Split& split,
                      const TrainConfig& cfg, std::uint64_t seed, const EpochCallback& on_epoch = {});

struct RunSummary {
    std::uint64_t seed = 0;
    double valid_acc = 0;
    double final_train_loss = 0;
};

/// Highest validation accuracy; ties go to lower final training loss, then lower seed.
std::size_t select_best(std::span<const RunSummary> runs);

std::string metrics_json(const Metrics& m, bool deterministic);
std::string metrics_csv(const Metrics& m, bool deterministic);

/// Trains cfg.seeds runs into out_dir/seed_<s>/ and writes the selected run's
/// checkpoint and a summary to out_dir/best.ckpt and out_dir/metrics.json.
/// Returns the index of the selected run.
std::size_t train_seeds(const ModelConfig& model_cfg, const rpm::Dataset& ds, const TrainConfig& cfg,
                        const std::filesystem::path& out_dir, const EpochCallback& on_epoch = {});

/// Keeps large activation buffers on the heap instead of fresh mmap calls
/// (glibc only; a no-op elsewhere). Call once at program start.
void tune_allocator();

/// Loads a checkpoint file into a freshly constructed model.
SCLModel load_model(const std::filesystem::path& ckpt);

}  // namespace scl

#include "scl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "json.hpp"
#include "scl/checkpoint.hpp"
#include "scl/errors.hpp"

namespace scl {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (weight_decay < 0) throw ConfigError("weight decay must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0,1)");
    if (!(eps > 0)) throw ConfigError("eps must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (seeds <= 0) throw ConfigError("seeds must be positive");
    if (patience < 0) throw ConfigError("patience must be non-negative");
}

void adam_step(ParameterStore& params, AdamState& state, const TrainConfig& cfg) {
    if (state.m.empty()) {
        for (const Parameter& p : params) {
            state.m.emplace_back(p.value.shape());
            state.v.emplace_back(p.value.shape());
        }
    }
    if (state.m.size() != params.size()) throw ContractError("Adam state does not match the parameter set");
    for (const Parameter& p : params)
        if (!p.grad.all_finite()) throw TrainingError("non-finite gradient in parameter " + p.name);

    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const double decay = 1.0 - cfg.lr * cfg.weight_decay;
    std::size_t i = 0;
    for (Parameter& p : params) {
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        ++i;
        if (m.shape() != p.value.shape()) throw ContractError("Adam moment shape mismatch for " + p.name);
        auto w = p.value.data();
        auto g = p.grad.data();
        auto md = m.data();
        auto vd = v.data();
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = g[k];
            const double mk = cfg.beta1 * md[k] + (1.0 - cfg.beta1) * gk;
            const double vk = cfg.beta2 * vd[k] + (1.0 - cfg.beta2) * gk * gk;
            md[k] = static_cast<Real>(mk);
            vd[k] = static_cast<Real>(vk);
            const double step = cfg.lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.eps);
            w[k] = static_cast<Real>((w[k] - step) * decay);
        }
    }
}

Split split_dataset(std::size_t n, std::array<double, 3> ratios, std::uint64_t seed) {
    for (double r : ratios)
        if (r < 0) throw ConfigError("split ratios must be non-negative");
    if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(seed, 0x5911));
    rng.shuffle(idx);
    const auto n_train = static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n)));
    const auto n_valid = static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n)));
    if (n_train == 0 || n_valid == 0 || n_train + n_valid >= n)
        throw ConfigError("dataset of " + std::to_string(n) + " problems leaves an empty split");
    Split s;
    s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.valid.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
                   idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
    s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), idx.end());
    return s;
}

Split split_for(const rpm::Dataset& ds, std::uint64_t seed) {
    if (!ds.manifest.splits) return split_dataset(ds.size(), {0.6, 0.2, 0.2}, seed);
    const auto [a, b] = *ds.manifest.splits;
    if (a == 0 || b <= a || b >= ds.size()) throw ConfigError("dataset split boundaries leave an empty split");
    Split s;
    for (std::size_t i = 0; i < ds.size(); ++i) (i < a ? s.train : i < b ? s.valid : s.test).push_back(i);
    // The generator emits the train+valid block in index order; shuffle before cutting
    // so both parts see every layout phase equally.
    std::vector<std::size_t> head(s.train);
    head.insert(head.end(), s.valid.begin(), s.valid.end());
    Rng rng(derive_seed(seed, 0x5912));
    rng.shuffle(head);
    s.train.assign(head.begin(), head.begin() + static_cast<std::ptrdiff_t>(a));
    s.valid.assign(head.begin() + static_cast<std::ptrdiff_t>(a), head.end());
    return s;
}

Tensor batch_panels(const rpm::Dataset& ds, std::span<const std::size_t> problems, bool mask_context) {
    const std::size_t P = static_cast<std::size_t>(ds.manifest.panel_px), area = P * P;
    Tensor out({problems.size() * kPanelsPerProblem, 1, P, P});
    Real* dst = out.ptr();
    for (std::size_t b = 0; b < problems.size(); ++b) {
        auto src = ds.problem_images(problems[b]);
        for (std::size_t k = 0; k < kPanelsPerProblem * area; ++k) {
            const bool masked = mask_context && k < kContextPanels * area;
            dst[b * kPanelsPerProblem * area + k] = masked ? Real(0) : Real(255 - src[k]) / Real(255);
        }
    }
    return out;
}

std::vector<int> batch_answers(const rpm::Dataset& ds, std::span<const std::size_t> problems) {
    std::vector<int> out;
    out.reserve(problems.size());
    for (std::size_t i : problems) out.push_back(ds.problems[i].answer_index);
    return out;
}

double evaluate(const SCLModel& model, const rpm::Dataset& ds, std::span<const std::size_t> problems,
                bool mask_context, std::size_t batch) {
    if (problems.empty()) return 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < problems.size(); start += batch) {
        auto chunk = problems.subspan(start, std::min(batch, problems.size() - start));
        const Tensor probs = model.predict(batch_panels(ds, chunk, mask_context));
        for (std::size_t n = 0; n < chunk.size(); ++n) {
            const Real* row = probs.ptr() + n * kCandidates;
            const auto pick = std::max_element(row, row + kCandidates) - row;
            correct += pick == ds.problems[chunk[n]].answer_index;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(problems.size());
}

TrainResult train_run(const ModelConfig& model_cfg, const rpm::Dataset& ds, const Split& split,
                      const TrainConfig& cfg, std::uint64_t seed, const EpochCallback& on_epoch) {
    cfg.validate();
    if (static_cast<int>(model_cfg.panel_px) != ds.manifest.panel_px)
        throw ConfigError("model expects " + std::to_string(model_cfg.panel_px) + " px panels, dataset has " +
                          std::to_string(ds.manifest.panel_px));
    if (split.train.empty() || split.valid.empty()) throw ConfigError("training needs non-empty train and valid splits");
    using clock = std::chrono::steady_clock;
    const auto t_start = clock::now();

    SCLModel model(model_cfg, derive_seed(seed, 1));
    AdamState adam;
    Rng order_rng(derive_seed(seed, 2));
    std::vector<std::size_t> order = split.train;

    TrainResult result;
    Metrics& m = result.metrics;
    m.seed = seed;
    if (!cfg.epoch_checkpoint_dir.empty()) fs::create_directories(cfg.epoch_checkpoint_dir);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t_epoch = clock::now();
        order_rng.shuffle(order);
        double loss_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::span<const std::size_t> chunk(order.data() + start, std::min(cfg.batch_size, order.size() - start));
            const Tensor panels = batch_panels(ds, chunk);
            const std::vector<int> answers = batch_answers(ds, chunk);
            model.params().zero_grad();
            Tape tape;
            Var loss = model.loss(tape, panels, answers);
            const double l = loss.value().item();
            if (!std::isfinite(l)) throw TrainingError("training loss became non-finite in epoch " + std::to_string(epoch));
            tape.backward(loss);
            adam_step(model.params(), adam, cfg);
            loss_sum += l * static_cast<double>(chunk.size());
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.valid_acc = evaluate(model, ds, split.valid);
        rec.seconds = std::chrono::duration<double>(clock::now() - t_epoch).count();
        m.epochs.push_back(rec);
        if (on_epoch) on_epoch(rec);

        if (!cfg.epoch_checkpoint_dir.empty()) {
            std::ostringstream name;
            name << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
            write_file(cfg.epoch_checkpoint_dir / name.str(), encode_checkpoint(model_cfg.to_text(), model.params()));
        }
        if (rec.valid_acc > m.best_valid_acc) {
            m.best_valid_acc = rec.valid_acc;
            m.best_epoch = epoch;
            result.checkpoint = encode_checkpoint(model_cfg.to_text(), model.params());
        } else if (cfg.patience > 0 && epoch - m.best_epoch >= cfg.patience) {
            m.stopped_early = true;
            break;
        }
    }
    m.final_train_loss = m.epochs.back().train_loss;

    load_into(decode_checkpoint(result.checkpoint), model.params());
    m.test_acc = split.test.empty() ? 0.0 : evaluate(model, ds, split.test);
    m.wall_seconds = std::chrono::duration<double>(clock::now() - t_start).count();
    return result;
}

std::size_t select_best(std::span<const RunSummary> runs) {
    if (runs.empty()) throw ContractError("select_best needs at least one run");
    std::size_t best = 0;
    for (std::size_t i = 1; i < runs.size(); ++i) {
        const RunSummary &a = runs[i], &b = runs[best];
        if (a.valid_acc != b.valid_acc) {
            if (a.valid_acc > b.valid_acc) best = i;
        } else if (a.final_train_loss != b.final_train_loss) {
            if (a.final_train_loss < b.final_train_loss) best = i;
        } else if (a.seed < b.seed) {
            best = i;
        }
    }
    return best;
}

namespace {

nlohmann::ordered_json metrics_object(const Metrics& m, bool deterministic) {
    nlohmann::ordered_json j;
    j["seed"] = m.seed;
    std::vector<int> epochs;
    std::vector<double> loss, valid, secs;
    for (const auto& e : m.epochs) {
        epochs.push_back(e.epoch);
        loss.push_back(e.train_loss);
        valid.push_back(e.valid_acc);
        secs.push_back(e.seconds);
    }
    j["epoch"] = epochs;
    j["train_loss"] = loss;
    j["valid_acc"] = valid;
    if (!deterministic) j["seconds"] = secs;
    j["best_epoch"] = m.best_epoch;
    j["best_valid_acc"] = m.best_valid_acc;
    j["test_acc"] = m.test_acc;
    j["final_train_loss"] = m.final_train_loss;
    j["stopped_early"] = m.stopped_early;
    if (!deterministic) j["wall_seconds"] = m.wall_seconds;
    return j;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw FormatError("cannot write " + path.string());
}

}  // namespace

std::string metrics_json(const Metrics& m, bool deterministic) { return metrics_object(m, deterministic).dump(2) + "\n"; }

std::string metrics_csv(const Metrics& m, bool deterministic) {
    std::ostringstream os;
    os << std::setprecision(9);
    os << "epoch,train_loss,valid_acc" << (deterministic ? "" : ",seconds") << "\n";
    for (const auto& e : m.epochs) {
        os << e.epoch << "," << e.train_loss << "," << e.valid_acc;
        if (!deterministic) os << "," << e.seconds;
        os << "\n";
    }
    return os.str();
}

std::size_t train_seeds(const ModelConfig& model_cfg, const rpm::Dataset& ds, const TrainConfig& cfg,
                        const fs::path& out_dir, const EpochCallback& on_epoch) {
    cfg.validate();
    fs::create_directories(out_dir);
    const Split split = split_for(ds, cfg.seed);
    std::vector<RunSummary> runs;
    std::vector<Metrics> all;
    for (int k = 0; k < cfg.seeds; ++k) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(k);
        const fs::path run_dir = out_dir / ("seed_" + std::to_string(seed));
        fs::create_directories(run_dir);
        TrainConfig run_cfg = cfg;
        if (!cfg.epoch_checkpoint_dir.empty()) run_cfg.epoch_checkpoint_dir = cfg.epoch_checkpoint_dir / run_dir.filename();
        TrainResult r = train_run(model_cfg, ds, split, run_cfg, seed, on_epoch);
        write_file(run_dir / "best.ckpt", r.checkpoint);
        write_text(run_dir / "metrics.json", metrics_json(r.metrics, cfg.deterministic));
        write_text(run_dir / "metrics.csv", metrics_csv(r.metrics, cfg.deterministic));
        runs.push_back({seed, r.metrics.best_valid_acc, r.metrics.final_train_loss});
        all.push_back(std::move(r.metrics));
    }
    const std::size_t best = select_best(runs);
    fs::copy_file(out_dir / ("seed_" + std::to_string(runs[best].seed)) / "best.ckpt", out_dir / "best.ckpt",
                  fs::copy_options::overwrite_existing);

    nlohmann::ordered_json summary;
    summary["selected_seed"] = runs[best].seed;
    summary["valid_acc"] = all[best].best_valid_acc;
    summary["test_acc"] = all[best].test_acc;
    summary["config"] = {{"lr", cfg.lr},
                         {"weight_decay", cfg.weight_decay},
                         {"batch_size", cfg.batch_size},
                         {"epochs", cfg.epochs},
                         {"seeds", cfg.seeds},
                         {"patience", cfg.patience},
                         {"seed", cfg.seed}};
    summary["model"] = model_cfg.to_text();
    summary["runs"] = nlohmann::ordered_json::array();
    for (const Metrics& m : all) summary["runs"].push_back(metrics_object(m, cfg.deterministic));
    write_text(out_dir / "metrics.json", summary.dump(2) + "\n");
    return best;
}

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 64 << 20);
#endif
}

SCLModel load_model(const fs::path& ckpt) {
    const Checkpoint c = decode_checkpoint(read_file(ckpt));
    SCLModel model(ModelConfig::parse(c.config_text), 0);
    load_into(c, model.params());
    return model;
}

}  // namespace scl

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"
#include "scl/checkpoint.hpp"
#include "scl/errors.hpp"
#include "scl/probes.hpp"
#include "scl/train.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace scl;

namespace {

constexpr int kExitAbort = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw FormatError("cannot write " + path.string());
}

std::vector<std::size_t> pick_split(const rpm::Dataset& ds, const std::string& which, std::uint64_t seed) {
    if (which == "all") {
        std::vector<std::size_t> all(ds.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    const Split s = split_for(ds, seed);
    if (which == "train") return s.train;
    if (which == "valid") return s.valid;
    if (which == "test") return s.test;
    throw UsageError("unknown split '" + which + "' (train|valid|test|all)");
}

// ---- gen ----------------------------------------------------------------

struct GenArgs {
    rpm::GenOptions opts;
    std::vector<std::string> exclude, require;
    std::string out;
};

int cmd_gen(const GenArgs& a) {
    rpm::GenOptions o = a.opts;
    for (const auto& s : a.exclude) o.exclude.push_back(rpm::parse_pair(s));
    for (const auto& s : a.require) o.require.push_back(rpm::parse_pair(s));
    const rpm::Dataset ds = rpm::generate_dataset(o);
    rpm::write_dataset(ds, a.out);
    std::cerr << "wrote " << ds.size() << " problems to " << a.out << "\n";
    return 0;
}

// ---- train --------------------------------------------------------------

struct TrainArgs {
    std::string data, out;
    TrainConfig cfg;
    std::size_t heads = 10;
    bool no_share_attr = false, no_share_rel = false, non_shared = false;
    bool epoch_ckpts = false, quiet = false;
};

ModelConfig model_config(const TrainArgs& a, int panel_px) {
    ModelConfig m;
    m.panel_px = static_cast<std::size_t>(panel_px);
    m.object_heads = a.heads;
    if (a.heads == 0 || m.object_dim % a.heads != 0)
        throw ConfigError("--heads must divide " + std::to_string(m.object_dim));
    m.attr_out_per_group = m.object_dim / a.heads;
    m.share_attr = !(a.no_share_attr || a.non_shared);
    m.share_rel = !(a.no_share_rel || a.non_shared);
    return m;
}

int cmd_train(const TrainArgs& a) {
    const rpm::Dataset ds = rpm::read_dataset(a.data);
    const ModelConfig model = model_config(a, ds.manifest.panel_px);
    TrainConfig cfg = a.cfg;
    const fs::path out(a.out);
    if (a.epoch_ckpts) cfg.epoch_checkpoint_dir = out / "epochs";
    fs::create_directories(out);

    ordered_json plan;
    plan["data"] = fs::absolute(a.data).string();
    plan["layout"] = ds.manifest.layout;
    plan["count"] = ds.manifest.count;
    plan["model"] = model.to_text();
    plan["train"] = {{"lr", cfg.lr},       {"weight_decay", cfg.weight_decay}, {"batch_size", cfg.batch_size},
                     {"epochs", cfg.epochs}, {"seeds", cfg.seeds},             {"patience", cfg.patience},
                     {"seed", cfg.seed},     {"deterministic", cfg.deterministic}};
    write_text(out / "plan.json", plan.dump(2) + "\n");

    const std::size_t best = train_seeds(model, ds, cfg, out, [&](const EpochRecord& e) {
        if (!a.quiet)
            std::fprintf(stderr, "epoch %3d  loss %.4f  valid %.4f  (%.1fs)\n", e.epoch, e.train_loss, e.valid_acc,
                         e.seconds);
    });
    std::ifstream in(out / "metrics.json");
    const auto summary = nlohmann::json::parse(in);
    ordered_json res;
    res["selected_seed"] = cfg.seed + best;
    res["valid_acc"] = summary["valid_acc"];
    res["test_acc"] = summary["test_acc"];
    std::cout << res.dump() << "\n";
    return 0;
}

// ---- eval ---------------------------------------------------------------

struct EvalArgs {
    std::string ckpt, data, split = "test";
    bool mask = false;
    std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
    if (!fs::exists(a.ckpt)) throw UsageError("checkpoint " + a.ckpt + " does not exist");
    const SCLModel model = load_model(a.ckpt);
    const rpm::Dataset ds = rpm::read_dataset(a.data);
    const auto problems = pick_split(ds, a.split, a.seed);
    ordered_json j;
    j["split"] = a.split;
    j["count"] = problems.size();
    j["mask_context"] = a.mask;
    j["accuracy"] = evaluate(model, ds, problems, a.mask);
    std::cout << j.dump() << "\n";
    return 0;
}

// ---- probe --------------------------------------------------------------

struct ProbeArgs {
    std::string ckpt, data, out, split = "test", coevolution;
    std::uint64_t seed = 0;
    bool pre_fr = false, multivariate = false;
};

int cmd_probe(const ProbeArgs& a) {
    if (!fs::exists(a.ckpt)) throw UsageError("checkpoint " + a.ckpt + " does not exist");
    const SCLModel model = load_model(a.ckpt);
    const rpm::Dataset ds = rpm::read_dataset(a.data);
    const auto problems = pick_split(ds, a.split, a.seed);
    const auto stage = a.pre_fr ? probes::FeatureStage::PreFR : probes::FeatureStage::PostFR;
    fs::create_directories(a.out);

    probes::ProbeReport report = probes::probe_all(probes::collect_features(model, ds, problems, stage), a.multivariate);
    report.split = a.split;
    report.stage = stage;
    write_text(fs::path(a.out) / "probe_report.json", probes::report_json(report));

    ordered_json summary;
    summary["mean_mse"] = report.mean_loss();
    std::vector<std::pair<rpm::Attribute, int>> missing;
    const auto rows = probes::relation_embeddings(model, ds, problems, report, &missing);
    for (const auto& [attr, comp] : missing)
        std::cerr << "warning: no single-neuron probe for " << to_string(attr) << " of component " << comp
                  << "; its relations are not exported\n";
    write_text(fs::path(a.out) / "relation_embeddings.csv", probes::embeddings_csv(rows));
    summary["embeddings"] = rows.size();
    std::size_t kinds = 0;
    {
        std::vector<bool> seen(4, false);
        for (const auto& r : rows) seen[static_cast<std::size_t>(r.relation)] = true;
        for (bool s : seen) kinds += s;
    }
    if (kinds >= 2) summary["relation_silhouette"] = probes::relation_silhouette(rows);

    if (!a.coevolution.empty()) {
        const auto ckpts = probes::epoch_checkpoints(a.coevolution);
        const auto co = probes::track_coevolution(ckpts, ds, problems, stage);
        write_text(fs::path(a.out) / "coevolution.csv", probes::coevolution_csv(co));
        if (co.correlation) summary["coevolution_correlation"] = *co.correlation;
        else summary["coevolution_correlation"] = nullptr;
    }
    std::cout << summary.dump() << "\n";
    return 0;
}

// ---- report -------------------------------------------------------------

struct ReportArgs {
    std::string run, format = "markdown";
};

int cmd_report(const ReportArgs& a) {
    if (!fs::is_directory(a.run)) throw UsageError("run directory " + a.run + " does not exist");
    struct Row {
        std::string path;
        nlohmann::json m;
    };
    std::vector<Row> rows;
    for (const auto& e : fs::recursive_directory_iterator(a.run)) {
        if (e.path().filename() != "metrics.json") continue;
        std::ifstream in(e.path());
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& ex) {
            throw FormatError(e.path().string() + ": " + ex.what());
        }
        if (!j.contains("epoch")) continue;  // multi-seed summaries repeat their runs
        rows.push_back({fs::relative(e.path().parent_path(), a.run).string(), j});
    }
    if (rows.empty()) throw UsageError("no run metrics under " + a.run);
    std::sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) { return x.path < y.path; });

    const bool csv = a.format == "csv";
    if (!csv && a.format != "markdown") throw UsageError("--format must be markdown or csv");
    const char* cols[] = {"run", "seed", "epochs", "best_epoch", "best_valid_acc", "test_acc", "final_train_loss"};
    std::ostringstream os;
    os << std::setprecision(6);
    for (std::size_t i = 0; i < 7; ++i) os << (csv ? (i ? "," : "") : "| ") << cols[i] << (csv ? "" : " ");
    os << (csv ? "\n" : "|\n");
    if (!csv) os << "|---|---|---|---|---|---|---|\n";
    for (const Row& r : rows) {
        const std::string sep = csv ? "," : " | ";
        os << (csv ? "" : "| ") << r.path << sep << r.m["seed"].get<std::uint64_t>() << sep << r.m["epoch"].size()
           << sep << r.m["best_epoch"].get<int>() << sep << r.m["best_valid_acc"].get<double>() << sep
           << r.m["test_acc"].get<double>() << sep << r.m["final_train_loss"].get<double>() << (csv ? "\n" : " |\n");
    }
    std::cout << os.str();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Scattering Compositional Learner: data generation, training, evaluation and probes"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate a puzzle dataset");
    g->add_option("--layout", gen.opts.layout, "center|lr|ud|oic|joint")
        ->check(CLI::IsMember({"center", "lr", "ud", "oic", "joint"}))
        ->capture_default_str();
    g->add_option("--count", gen.opts.count, "Number of problems")->capture_default_str();
    g->add_option("--seed", gen.opts.seed, "Generator seed")->capture_default_str();
    g->add_option("--px", gen.opts.panel_px, "Panel side in pixels")->capture_default_str();
    g->add_option("--rel-count", gen.opts.rel_count, "Rules per component (1-3)")->capture_default_str();
    g->add_option("--heldout-exclude", gen.exclude, "attribute:relation pair kept out of train/valid");
    g->add_option("--heldout-require", gen.require, "attribute:relation pair present in every test problem");
    g->add_option("--out", gen.out, "Output directory")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train one or more seeds and keep the best-validated model");
    t->add_option("--data", tr.data, "Dataset directory")->required();
    t->add_option("--out", tr.out, "Run directory")->required();
    t->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
    t->add_option("--lr", tr.cfg.lr)->capture_default_str();
    t->add_option("--wd", tr.cfg.weight_decay, "Decoupled weight decay")->capture_default_str();
    t->add_option("--batch", tr.cfg.batch_size)->capture_default_str();
    t->add_option("--seeds", tr.cfg.seeds, "Number of runs")->capture_default_str();
    t->add_option("--seed", tr.cfg.seed, "Base seed (also fixes the data split)")->capture_default_str();
    t->add_option("--patience", tr.cfg.patience, "Early-stopping patience in epochs, 0 disables")->capture_default_str();
    t->add_flag("--deterministic", tr.cfg.deterministic, "Omit timing fields so reruns write identical files");
    t->add_option("--heads", tr.heads, "Attribute-network heads")->capture_default_str();
    t->add_flag("--non-shared", tr.non_shared, "Separate weights for every attribute and relation head");
    t->add_flag("--no-share-attr", tr.no_share_attr, "Separate attribute-head weights");
    t->add_flag("--no-share-rel", tr.no_share_rel, "Separate relation-head weights");
    t->add_flag("--epoch-checkpoints", tr.epoch_ckpts, "Save a checkpoint after every epoch under <out>/epochs/seed_<s>");
    t->add_flag("--quiet", tr.quiet, "No per-epoch progress");

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Accuracy of a checkpoint on a dataset split");
    e->add_option("--ckpt", ev.ckpt)->required();
    e->add_option("--data", ev.data)->required();
    e->add_option("--split", ev.split, "train|valid|test|all")->capture_default_str();
    e->add_option("--seed", ev.seed, "Split seed used for training")->capture_default_str();
    e->add_flag("--mask-context", ev.mask, "Blank the 8 context panels");

    ProbeArgs pr;
    auto* p = app.add_subcommand("probe", "Composition-loss probes and relation embeddings");
    p->add_option("--ckpt", pr.ckpt)->required();
    p->add_option("--data", pr.data)->required();
    p->add_option("--out", pr.out)->required();
    p->add_option("--split", pr.split, "train|valid|test|all")->capture_default_str();
    p->add_option("--seed", pr.seed, "Split seed used for training")->capture_default_str();
    p->add_flag("--pre-fr", pr.pre_fr, "Probe attribute features before the post-merge FR block");
    p->add_flag("--multivariate", pr.multivariate, "Fit whole 8-neuron groups instead of single neurons");
    p->add_option("--coevolution", pr.coevolution, "Directory of per-epoch checkpoints");

    ReportArgs rp;
    auto* r = app.add_subcommand("report", "Table of every run's metrics under a directory");
    r->add_option("--run", rp.run)->required();
    r->add_option("--format", rp.format, "markdown|csv")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        return app.exit(err) == 0 ? 0 : kExitUsage;
    }

    try {
        if (*g) return cmd_gen(gen);
        if (*t) return cmd_train(tr);
        if (*e) return cmd_eval(ev);
        if (*p) return cmd_probe(pr);
        if (*r) return cmd_report(rp);
    } catch (const UsageError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kExitUsage;
    } catch (const FormatError& err) {
        std::cerr << "format error: " << err.what() << "\n";
        return kExitUsage;
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return kExitUsage;
    } catch (const ConstraintError& err) {
        std::cerr << "infeasible filter: " << err.what() << "\n";
        return kExitUsage;
    } catch (const DomainError& err) {
        std::cerr << "invalid value: " << err.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& err) {
        std::cerr << "aborted: " << err.what() << "\n";
        return kExitAbort;
    }
    return kExitUsage;
}

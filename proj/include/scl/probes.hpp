#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scl/dataset.hpp"
#include "scl/model.hpp"

namespace scl::probes {

/// y ~ slope * x + intercept by closed-form least squares.
struct LinearFit {
    double slope = 0;
    double intercept = 0;
    double mse = 0;
    std::size_t n = 0;
};

/// Returns nullopt when x has (numerically) zero variance.
std::optional<LinearFit> fit_line(std::span<const double> x, std::span<const double> y);

enum class FeatureStage { PostFR, PreFR };

/// Attribute-level features of every panel (8 context + 8 candidates per
/// problem) together with each panel's symbolic objects.
struct ProbeSet {
    std::size_t width = 0;
    std::size_t group_width = 8;
    std::vector<double> features;  // rows x width
    std::vector<rpm::Layout> layouts;
    std::vector<rpm::Panel> panels;

    std::size_t rows() const { return panels.size(); }
    double at(std::size_t row, std::size_t col) const { return features[row * width + col]; }
};

ProbeSet collect_features(const SCLModel& model, const rpm::Dataset& ds, std::span<const std::size_t> problems,
                          FeatureStage stage = FeatureStage::PostFR, std::size_t batch = 128);

/// Best linear read-out of one attribute of one component.
struct AttributeProbe {
    rpm::Attribute attribute = rpm::Attribute::Type;
    int component = 0;
    /// 0-based neuron (1-D mode) or group (multivariate mode) index.
    std::size_t index = 0;
    bool multivariate = false;
    std::size_t group_width = 8;
    LinearFit fit;                 // 1-D mode
    std::vector<double> weights;   // multivariate mode: group_width weights then bias
    double accuracy = 0;
    std::size_t samples = 0;
    std::vector<std::size_t> skipped;  // constant neurons
};

/// Labels are attribute values divided by the attribute's domain maximum.
/// Only rows whose layout has the component take part. Throws DomainError when
/// the label is constant over those rows or no row qualifies.
AttributeProbe composition_loss(const ProbeSet& set, rpm::Attribute attribute, int component,
                                bool multivariate = false);

/// Exact-match rate of round(prediction * domain max), clamped to the
/// component's domain, against the true value. Also stored into probe.accuracy
/// by composition_loss.
double symbolic_accuracy(const ProbeSet& set, const AttributeProbe& probe);

struct ProbeReport {
    std::string split;
    FeatureStage stage = FeatureStage::PostFR;
    std::vector<AttributeProbe> probes;
    /// (attribute, component) pairs whose label is constant on this data.
    std::vector<std::pair<rpm::Attribute, int>> degenerate;

    double mean_loss() const;
    const AttributeProbe* find(rpm::Attribute a, int component) const;
};

/// Probes every attribute of every component present in the set.
ProbeReport probe_all(const ProbeSet& set, bool multivariate = false);
std::string report_json(const ProbeReport& report);

/// Pearson correlation; nullopt if either series is constant or shorter than 2.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

struct CoevolutionPoint {
    int epoch = 0;
    bool present = false;
    double test_acc = 0;
    double mean_loss = 0;
};

struct Coevolution {
    std::vector<CoevolutionPoint> points;
    /// corr(test accuracy, -mean composition loss) over present epochs.
    std::optional<double> correlation;
};

/// epoch_001.ckpt ... in `dir`, indexed by epoch from 1 to the largest found;
/// missing epochs are nullopt.
std::vector<std::optional<std::filesystem::path>> epoch_checkpoints(const std::filesystem::path& dir);

Coevolution track_coevolution(std::span<const std::optional<std::filesystem::path>> checkpoints,
                              const rpm::Dataset& ds, std::span<const std::size_t> problems,
                              FeatureStage stage = FeatureStage::PostFR);
std::string coevolution_csv(const Coevolution& c);

struct EmbeddingRow {
    std::vector<double> vec;
    rpm::RelationKind relation = rpm::RelationKind::Constant;
    rpm::Attribute attribute = rpm::Attribute::Type;
};

/// For every problem and governed (attribute, component): the relation net's
/// output at the probed neuron's position, with the answer in place.
/// Rules without a 1-D probe are skipped and returned in `missing`.
std::vector<EmbeddingRow> relation_embeddings(const SCLModel& model, const rpm::Dataset& ds,
                                              std::span<const std::size_t> problems, const ProbeReport& report,
                                              std::vector<std::pair<rpm::Attribute, int>>* missing = nullptr,
                                              std::size_t batch = 64);
std::string embeddings_csv(std::span<const EmbeddingRow> rows);

/// Mean silhouette with Euclidean distance. Points in singleton clusters score 0.
/// Throws ContractError with fewer than 2 distinct labels.
double silhouette(std::span<const std::vector<double>> points, std::span<const int> labels);
/// Silhouette of embeddings grouped by relation kind.
double relation_silhouette(std::span<const EmbeddingRow> rows);

}  // namespace scl::probes

#include "scl/probes.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <regex>
#include <sstream>

#include "json.hpp"
#include "scl/errors.hpp"
#include "scl/train.hpp"

namespace scl::probes {

namespace fs = std::filesystem;
using rpm::Attribute;

std::optional<LinearFit> fit_line(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.empty()) throw ContractError("fit_line needs equal, non-empty series");
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if (sxx <= 1e-12 * n * std::max(1.0, mx * mx)) return std::nullopt;
    LinearFit f;
    f.n = x.size();
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    f.mse = std::max(0.0, (syy - sxy * f.slope) / n);
    return f;
}

ProbeSet collect_features(const SCLModel& model, const rpm::Dataset& ds, std::span<const std::size_t> problems,
                          FeatureStage stage, std::size_t batch) {
    ProbeSet set;
    set.width = model.config().attr_width();
    set.group_width = model.config().attr_out_per_group;
    set.features.reserve(problems.size() * kPanelsPerProblem * set.width);
    for (std::size_t start = 0; start < problems.size(); start += batch) {
        auto chunk = problems.subspan(start, std::min(batch, problems.size() - start));
        Tape tape(false);
        Var obj = model.object_net_forward(tape, tape.constant(batch_panels(ds, chunk)));
        Var feats = stage == FeatureStage::PostFR ? model.attribute_scatter(tape, obj) : model.attribute_merge(tape, obj);
        const Tensor& v = feats.value();
        set.features.insert(set.features.end(), v.ptr(), v.ptr() + v.numel());
        for (std::size_t i : chunk) {
            const rpm::ProblemSpec& p = ds.problems[i];
            for (std::size_t k = 0; k < kContextPanels; ++k) set.panels.push_back(p.panels[k]);
            for (const rpm::Panel& c : p.candidates) set.panels.push_back(c);
            set.layouts.insert(set.layouts.end(), kPanelsPerProblem, p.layout);
        }
    }
    return set;
}

namespace {

std::vector<std::size_t> rows_with(const ProbeSet& set, int component) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < set.rows(); ++r)
        if (rpm::component_count(set.layouts[r]) > component) rows.push_back(r);
    return rows;
}

double label_of(const ProbeSet& set, std::size_t row, Attribute a, int component) {
    const int ai = static_cast<int>(a);
    return set.panels[row][static_cast<std::size_t>(component)][static_cast<std::size_t>(ai)] /
           static_cast<double>(rpm::kDomainMax[static_cast<std::size_t>(ai)]);
}

std::vector<double> labels_for(const ProbeSet& set, std::span<const std::size_t> rows, Attribute a, int component) {
    std::vector<double> y;
    y.reserve(rows.size());
    for (std::size_t r : rows) y.push_back(label_of(set, r, a, component));
    return y;
}

bool is_constant(std::span<const double> y) {
    return std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); });
}

double predict_row(const ProbeSet& set, const AttributeProbe& p, std::size_t row) {
    if (!p.multivariate) return p.fit.slope * set.at(row, p.index) + p.fit.intercept;
    double s = p.weights.back();
    for (std::size_t k = 0; k < set.group_width; ++k) s += p.weights[k] * set.at(row, p.index * set.group_width + k);
    return s;
}

void fit_groups(const ProbeSet& set, std::span<const std::size_t> rows, std::span<const double> y, AttributeProbe& best) {
    const std::size_t G = set.width / set.group_width, D = set.group_width;
    const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
    double best_mse = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < G; ++g) {
        Eigen::MatrixXd X(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(D + 1));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t k = 0; k < D; ++k)
                X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = set.at(rows[i], g * D + k);
            X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(D)) = 1.0;
        }
        const Eigen::VectorXd w = X.colPivHouseholderQr().solve(yv);
        const double mse = (X * w - yv).squaredNorm() / static_cast<double>(rows.size());
        if (mse < best_mse) {
            best_mse = mse;
            best.index = g;
            best.weights.assign(w.data(), w.data() + w.size());
            best.fit.mse = mse;
            best.fit.n = rows.size();
        }
    }
}

}  // namespace

AttributeProbe composition_loss(const ProbeSet& set, Attribute attribute, int component, bool multivariate) {
    if (set.width == 0 || set.group_width == 0 || set.width % set.group_width != 0)
        throw ContractError("probe set has inconsistent widths");
    const std::vector<std::size_t> rows = rows_with(set, component);
    if (rows.empty())
        throw DomainError("no panel has component " + std::to_string(component) + " for probing " + to_string(attribute));
    const std::vector<double> y = labels_for(set, rows, attribute, component);
    if (is_constant(y))
        throw DomainError("degenerate label: " + to_string(attribute) + " of component " + std::to_string(component) +
                          " is constant");

    AttributeProbe best;
    best.attribute = attribute;
    best.component = component;
    best.multivariate = multivariate;
    best.group_width = set.group_width;
    best.samples = rows.size();
    if (multivariate) {
        fit_groups(set, rows, y, best);
    } else {
        double best_mse = std::numeric_limits<double>::infinity();
        std::vector<double> x(rows.size());
        for (std::size_t k = 0; k < set.width; ++k) {
            for (std::size_t i = 0; i < rows.size(); ++i) x[i] = set.at(rows[i], k);
            const auto f = fit_line(x, y);
            if (!f) {
                best.skipped.push_back(k);
                continue;
            }
            if (f->mse < best_mse) {
                best_mse = f->mse;
                best.index = k;
                best.fit = *f;
            }
        }
        if (!std::isfinite(best_mse)) throw DomainError("every probed neuron is constant");
    }
    best.accuracy = symbolic_accuracy(set, best);
    return best;
}

double symbolic_accuracy(const ProbeSet& set, const AttributeProbe& probe) {
    const std::vector<std::size_t> rows = rows_with(set, probe.component);
    if (rows.empty()) return 0.0;
    const auto ai = static_cast<std::size_t>(probe.attribute);
    std::size_t hits = 0;
    for (std::size_t r : rows) {
        const rpm::Domain d = rpm::domain(set.layouts[r], probe.component, probe.attribute);
        const double raw = std::round(predict_row(set, probe, r) * rpm::kDomainMax[ai]);
        const int v = static_cast<int>(std::clamp(raw, static_cast<double>(d.lo), static_cast<double>(d.hi)));
        hits += v == set.panels[r][static_cast<std::size_t>(probe.component)][ai];
    }
    return static_cast<double>(hits) / static_cast<double>(rows.size());
}

double ProbeReport::mean_loss() const {
    if (probes.empty()) return 0.0;
    double s = 0;
    for (const auto& p : probes) s += p.fit.mse;
    return s / static_cast<double>(probes.size());
}

const AttributeProbe* ProbeReport::find(Attribute a, int component) const {
    for (const auto& p : probes)
        if (p.attribute == a && p.component == component) return &p;
    return nullptr;
}

ProbeReport probe_all(const ProbeSet& set, bool multivariate) {
    ProbeReport report;
    int components = 0;
    for (rpm::Layout l : set.layouts) components = std::max(components, rpm::component_count(l));
    for (int c = 0; c < components; ++c) {
        const std::vector<std::size_t> rows = rows_with(set, c);
        for (Attribute a : rpm::kAttributes) {
            if (is_constant(labels_for(set, rows, a, c))) {
                report.degenerate.emplace_back(a, c);
                continue;
            }
            report.probes.push_back(composition_loss(set, a, c, multivariate));
        }
    }
    return report;
}

std::string report_json(const ProbeReport& report) {
    nlohmann::ordered_json j;
    j["split"] = report.split;
    j["features"] = report.stage == FeatureStage::PostFR ? "post_fr" : "pre_fr";
    nlohmann::ordered_json probes = nlohmann::ordered_json::object();
    for (const AttributeProbe& p : report.probes) {
        std::string key = to_string(p.attribute);
        if (p.component > 0) key += "#" + std::to_string(p.component);
        nlohmann::ordered_json e;
        e["component"] = p.component;
        if (p.multivariate) {
            e["neuron_p"] = p.index + 1;
            e["neuron_q"] = nullptr;
            e["weights"] = p.weights;
        } else {
            e["neuron_p"] = p.index / p.group_width + 1;
            e["neuron_q"] = p.index % p.group_width + 1;
            e["slope"] = p.fit.slope;
            e["intercept"] = p.fit.intercept;
        }
        e["mse"] = p.fit.mse;
        e["accuracy"] = p.accuracy;
        e["samples"] = p.samples;
        e["skipped_neurons"] = p.skipped.size();
        probes[key] = e;
    }
    j["probes"] = probes;
    j["mean_mse"] = report.mean_loss();
    nlohmann::ordered_json deg = nlohmann::ordered_json::array();
    for (const auto& [a, c] : report.degenerate) deg.push_back({{"attribute", to_string(a)}, {"component", c}});
    j["degenerate"] = deg;
    return j.dump(2) + "\n";
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ContractError("pearson needs series of equal length");
    if (x.size() < 2) return std::nullopt;
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0, syy = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx <= 0 || syy <= 0) return std::nullopt;
    return sxy / std::sqrt(sxx * syy);
}

std::vector<std::optional<fs::path>> epoch_checkpoints(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw FormatError("checkpoint directory " + dir.string() + " does not exist");
    const std::regex pattern(R"(epoch_(\d+)\.ckpt)");
    std::map<int, fs::path> found;
    for (const auto& entry : fs::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = entry.path().filename().string();
        if (std::regex_match(name, m, pattern)) found[std::stoi(m[1].str())] = entry.path();
    }
    if (found.empty()) throw FormatError("no epoch_<n>.ckpt files in " + dir.string());
    std::vector<std::optional<fs::path>> out(static_cast<std::size_t>(found.rbegin()->first));
    for (const auto& [epoch, path] : found)
        if (epoch >= 1) out[static_cast<std::size_t>(epoch - 1)] = path;
    return out;
}

Coevolution track_coevolution(std::span<const std::optional<fs::path>> checkpoints, const rpm::Dataset& ds,
                              std::span<const std::size_t> problems, FeatureStage stage) {
    Coevolution c;
    std::vector<double> acc, neg_loss;
    for (std::size_t e = 0; e < checkpoints.size(); ++e) {
        CoevolutionPoint pt;
        pt.epoch = static_cast<int>(e + 1);
        if (checkpoints[e] && fs::exists(*checkpoints[e])) {
            const SCLModel model = load_model(*checkpoints[e]);
            pt.present = true;
            pt.test_acc = evaluate(model, ds, problems);
            pt.mean_loss = probe_all(collect_features(model, ds, problems, stage)).mean_loss();
            acc.push_back(pt.test_acc);
            neg_loss.push_back(-pt.mean_loss);
        }
        c.points.push_back(pt);
    }
    c.correlation = pearson(acc, neg_loss);
    return c;
}

std::string coevolution_csv(const Coevolution& c) {
    std::ostringstream os;
    os << std::setprecision(9) << "epoch,test_acc,mean_comp_loss\n";
    for (const auto& p : c.points) {
        os << p.epoch << ",";
        if (p.present) os << p.test_acc << "," << p.mean_loss;
        else os << ",";
        os << "\n";
    }
    return os.str();
}

std::vector<EmbeddingRow> relation_embeddings(const SCLModel& model, const rpm::Dataset& ds,
                                              std::span<const std::size_t> problems, const ProbeReport& report,
                                              std::vector<std::pair<Attribute, int>>* missing, std::size_t batch) {
    const std::size_t W = model.config().attr_width(), R = model.config().rel_out;
    std::vector<EmbeddingRow> rows;
    for (std::size_t start = 0; start < problems.size(); start += batch) {
        auto chunk = problems.subspan(start, std::min(batch, problems.size() - start));
        Tape tape(false);
        const ForwardTrace tr = model.forward(tape, batch_panels(ds, chunk));
        const Tensor& rel = tr.relation.value();  // [N*8, W*R]
        for (std::size_t n = 0; n < chunk.size(); ++n) {
            const rpm::ProblemSpec& p = ds.problems[chunk[n]];
            const Real* base = rel.ptr() + (n * kCandidates + static_cast<std::size_t>(p.answer_index)) * W * R;
            for (const rpm::RuleSpec& rule : p.rules) {
                const AttributeProbe* probe = report.find(rule.attribute, rule.component);
                if (!probe || probe->multivariate) {
                    if (missing) {
                        const std::pair<Attribute, int> key{rule.attribute, rule.component};
                        if (std::find(missing->begin(), missing->end(), key) == missing->end()) missing->push_back(key);
                    }
                    continue;
                }
                EmbeddingRow row;
                row.vec.assign(base + probe->index * R, base + (probe->index + 1) * R);
                row.relation = rule.relation.kind;
                row.attribute = rule.attribute;
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

std::string embeddings_csv(std::span<const EmbeddingRow> rows) {
    std::ostringstream os;
    os << std::setprecision(9);
    const std::size_t dims = rows.empty() ? 5 : rows.front().vec.size();
    for (std::size_t k = 0; k < dims; ++k) os << "d" << k << ",";
    os << "relation,attribute\n";
    for (const EmbeddingRow& r : rows) {
        for (double v : r.vec) os << v << ",";
        os << to_string(r.relation) << "," << to_string(r.attribute) << "\n";
    }
    return os.str();
}

double silhouette(std::span<const std::vector<double>> points, std::span<const int> labels) {
    if (points.size() != labels.size()) throw ContractError("silhouette needs one label per point");
    std::vector<int> ids(labels.begin(), labels.end());
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    if (ids.size() < 2) throw ContractError("silhouette needs at least two distinct labels");
    std::vector<std::size_t> cluster(points.size()), sizes(ids.size(), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        cluster[i] = static_cast<std::size_t>(std::lower_bound(ids.begin(), ids.end(), labels[i]) - ids.begin());
        ++sizes[cluster[i]];
    }
    auto dist = [&](std::size_t i, std::size_t j) {
        double s = 0;
        for (std::size_t k = 0; k < points[i].size(); ++k) s += (points[i][k] - points[j][k]) * (points[i][k] - points[j][k]);
        return std::sqrt(s);
    };
    double total = 0;
    std::vector<double> sums(ids.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (sizes[cluster[i]] < 2) continue;
        std::fill(sums.begin(), sums.end(), 0.0);
        for (std::size_t j = 0; j < points.size(); ++j)
            if (j != i) sums[cluster[j]] += dist(i, j);
        const double a = sums[cluster[i]] / static_cast<double>(sizes[cluster[i]] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < ids.size(); ++c)
            if (c != cluster[i]) b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
        const double m = std::max(a, b);
        if (m > 0) total += (b - a) / m;
    }
    return total / static_cast<double>(points.size());
}

double relation_silhouette(std::span<const EmbeddingRow> rows) {
    std::vector<std::vector<double>> pts;
    std::vector<int> labels;
    for (const EmbeddingRow& r : rows) {
        pts.push_back(r.vec);
        labels.push_back(static_cast<int>(r.relation));
    }
    return silhouette(pts, labels);
}

}  // namespace scl::probes

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "scl/dataset.hpp"
#include "scl/errors.hpp"
#include "scl/render.hpp"

namespace scl::rpm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json pairs_to_json(const std::vector<Pair>& pairs) {
    json out = json::array();
    for (const Pair& p : pairs) out.push_back(to_string(p.attribute) + ":" + to_string(p.relation));
    return out;
}

std::vector<Pair> pairs_from_json(const json& j) {
    std::vector<Pair> out;
    for (const auto& s : j) out.push_back(parse_pair(s.get<std::string>()));
    return out;
}

json panel_to_json(const Panel& p) {
    json out = json::array();
    for (const Object& o : p) out.push_back({o[0], o[1], o[2]});
    return out;
}

Panel panel_from_json(const json& j) {
    Panel p;
    for (const auto& o : j) {
        if (o.size() != 3) throw FormatError("object must have 3 attribute values");
        p.push_back({o[0].get<int>(), o[1].get<int>(), o[2].get<int>()});
    }
    return p;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json manifest_to_json(const Manifest& m) {
    json j = {{"version", m.version},   {"layout", m.layout},
              {"count", m.count},       {"panel_px", m.panel_px},
              {"seed", m.seed},         {"rel_count", m.rel_count},
              {"filters", {{"exclude", pairs_to_json(m.exclude)}, {"require", pairs_to_json(m.require)}}}};
    if (m.splits) j["splits"] = {{"train", {0, (*m.splits)[0]}}, {"valid", {(*m.splits)[0], (*m.splits)[1]}},
                                 {"test", {(*m.splits)[1], m.count}}};
    return j;
}

Manifest manifest_from_json(const json& j) {
    Manifest m;
    m.version = j.at("version").get<int>();
    if (m.version != kDatasetVersion)
        throw FormatError("unsupported dataset version " + std::to_string(m.version) + " (expected " +
                          std::to_string(kDatasetVersion) + ")");
    m.layout = j.at("layout").get<std::string>();
    m.count = j.at("count").get<std::size_t>();
    m.panel_px = j.at("panel_px").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.rel_count = j.value("rel_count", 3);
    if (j.contains("filters")) {
        m.exclude = pairs_from_json(j["filters"].value("exclude", json::array()));
        m.require = pairs_from_json(j["filters"].value("require", json::array()));
    }
    if (j.contains("splits")) {
        const auto& s = j["splits"];
        m.splits = std::array<std::size_t, 2>{s.at("valid")[0].get<std::size_t>(), s.at("test")[0].get<std::size_t>()};
    }
    if (m.panel_px <= 0) throw FormatError("panel_px must be positive");
    return m;
}

}  // namespace

Layout layout_of(const GenOptions& opts, std::size_t index) {
    if (opts.layout == "joint") return kLayouts[index % kLayouts.size()];
    return parse_layout(opts.layout);
}

std::optional<HeldoutFilter> filter_of(const GenOptions& opts, std::size_t index) {
    const bool both = !opts.exclude.empty() && !opts.require.empty();
    if (both) {
        if (index < opts.count * 4 / 5) return HeldoutFilter{FilterMode::Exclude, opts.exclude};
        return HeldoutFilter{FilterMode::Require, opts.require};
    }
    if (!opts.require.empty()) return HeldoutFilter{FilterMode::Require, opts.require};
    if (!opts.exclude.empty()) return HeldoutFilter{FilterMode::Exclude, opts.exclude};
    return std::nullopt;
}

ProblemSpec generate_indexed(const GenOptions& opts, std::size_t index) {
    return generate_problem(layout_of(opts, index), derive_seed(opts.seed, index), filter_of(opts, index),
                            opts.rel_count, opts.panel_px);
}

Dataset generate_dataset(const GenOptions& opts) {
    if (opts.count == 0) throw ConfigError("dataset count must be positive");
    if (opts.panel_px < 8) throw ConfigError("panel_px must be at least 8");
    if (opts.layout != "joint") parse_layout(opts.layout);  // validates the name
    Dataset ds;
    Manifest& m = ds.manifest;
    m.layout = opts.layout;
    m.count = opts.count;
    m.panel_px = opts.panel_px;
    m.seed = opts.seed;
    m.rel_count = opts.rel_count;
    m.exclude = opts.exclude;
    m.require = opts.require;
    if (!opts.exclude.empty() && !opts.require.empty()) {
        const std::size_t test_start = opts.count * 4 / 5;
        m.splits = std::array<std::size_t, 2>{opts.count * 3 / 5, test_start};
    }
    ds.problems.reserve(opts.count);
    ds.images.resize(opts.count * ds.problem_bytes());
    for (std::size_t i = 0; i < opts.count; ++i) {
        ds.problems.push_back(generate_indexed(opts, i));
        render_problem(ds.problems.back(), opts.panel_px,
                       std::span<std::uint8_t>(ds.images.data() + i * ds.problem_bytes(), ds.problem_bytes()));
    }
    return ds;
}

std::string problem_to_json(const ProblemSpec& p) {
    json rules = json::array();
    for (const RuleSpec& r : p.rules)
        rules.push_back({{"component", r.component},
                         {"attribute", to_string(r.attribute)},
                         {"relation", to_string(r.relation.kind)},
                         {"param", r.relation.param}});
    json panels = json::array(), cands = json::array();
    for (const Panel& q : p.panels) panels.push_back(panel_to_json(q));
    for (const Panel& q : p.candidates) cands.push_back(panel_to_json(q));
    json j = {{"layout", to_string(p.layout)}, {"seed", p.rng_seed},  {"answer_index", p.answer_index},
              {"rules", rules},                {"panels", panels},   {"candidates", cands}};
    return j.dump();
}

ProblemSpec problem_from_json(const std::string& line) {
    const json j = json::parse(line);
    ProblemSpec p;
    p.layout = parse_layout(j.at("layout").get<std::string>());
    p.rng_seed = j.at("seed").get<std::uint64_t>();
    p.answer_index = j.at("answer_index").get<int>();
    if (p.answer_index < 0 || p.answer_index >= 8) throw FormatError("answer_index outside [0,8)");
    for (const auto& r : j.at("rules"))
        p.rules.push_back({r.at("component").get<int>(), parse_attribute(r.at("attribute").get<std::string>()),
                           {parse_relation_kind(r.at("relation").get<std::string>()), r.at("param").get<int>()}});
    const auto& panels = j.at("panels");
    const auto& cands = j.at("candidates");
    if (panels.size() != 9 || cands.size() != 8) throw FormatError("expected 9 panels and 8 candidates");
    for (std::size_t i = 0; i < 9; ++i) p.panels[i] = panel_from_json(panels[i]);
    for (std::size_t i = 0; i < 8; ++i) p.candidates[i] = panel_from_json(cands[i]);
    return p;
}

void write_dataset(const Dataset& ds, const fs::path& dir) {
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "manifest.json", std::ios::binary);
        out << manifest_to_json(ds.manifest).dump(2) << "\n";
        if (!out) throw FormatError("cannot write " + (dir / "manifest.json").string());
    }
    {
        std::ofstream out(dir / "problems.ndjson", std::ios::binary);
        for (const ProblemSpec& p : ds.problems) out << problem_to_json(p) << "\n";
        if (!out) throw FormatError("cannot write " + (dir / "problems.ndjson").string());
    }
    std::ofstream out(dir / "images.bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(ds.images.data()), static_cast<std::streamsize>(ds.images.size()));
    if (!out) throw FormatError("cannot write " + (dir / "images.bin").string());
}

Dataset read_dataset(const fs::path& dir) {
    Dataset ds;
    const std::string manifest_text = read_file(dir / "manifest.json");
    try {
        ds.manifest = manifest_from_json(json::parse(manifest_text));
    } catch (const json::exception& e) {
        throw FormatError("manifest.json: " + std::string(e.what()));
    }

    const std::string text = read_file(dir / "problems.ndjson");
    std::size_t offset = 0, line_no = 0;
    while (offset < text.size()) {
        std::size_t end = text.find('\n', offset);
        if (end == std::string::npos) end = text.size();
        ++line_no;
        if (end > offset) {
            try {
                ds.problems.push_back(problem_from_json(text.substr(offset, end - offset)));
            } catch (const std::exception& e) {
                throw FormatError("problems.ndjson line " + std::to_string(line_no) + " (byte offset " +
                                  std::to_string(offset) + "): " + e.what());
            }
        }
        offset = end + 1;
    }
    if (ds.problems.size() != ds.manifest.count)
        throw FormatError("manifest count " + std::to_string(ds.manifest.count) + " but problems.ndjson holds " +
                          std::to_string(ds.problems.size()) + " problems");

    const std::string bin = read_file(dir / "images.bin");
    const std::size_t expected = ds.manifest.count * ds.problem_bytes();
    if (bin.size() != expected)
        throw FormatError("images.bin: expected " + std::to_string(expected) + " bytes, data ends at offset " +
                          std::to_string(bin.size()));
    ds.images.assign(bin.begin(), bin.end());
    if (ds.manifest.splits) {
        const auto [a, b] = *ds.manifest.splits;
        if (!(a <= b && b <= ds.manifest.count)) throw FormatError("manifest split boundaries out of order");
    }
    return ds;
}

}  // namespace scl::rpm

#include "scl/model.hpp"

#include <charconv>
#include <map>
#include <sstream>

#include "scl/errors.hpp"

namespace scl {

namespace {

std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    std::size_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("bad value for " + key + ": '" + v + "'");
    return out;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    std::stringstream ss(v);
    for (std::string item; std::getline(ss, item, ',');) out.push_back(parse_size(key, item));
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true") return true;
    if (v == "0" || v == "false") return false;
    throw ConfigError("bad value for " + key + ": '" + v + "'");
}

}  // namespace

void ModelConfig::validate() const {
    if (object_heads == 0 || object_dim % object_heads != 0)
        throw ConfigError("object_heads (" + std::to_string(object_heads) + ") must divide object_dim (" +
                          std::to_string(object_dim) + ")");
    if (conv_channels.empty()) throw ConfigError("conv_channels must not be empty");
    if (rel_hidden.empty()) throw ConfigError("rel_hidden must not be empty");
    if (panel_px == 0) throw ConfigError("panel_px must be positive");
    for (auto w : {object_dim, attr_out_per_group, attr_hidden, rel_out, out_hidden})
        if (w == 0) throw ConfigError("layer widths must be positive");
}

std::string ModelConfig::to_text() const {
    std::ostringstream os;
    os << "object_dim=" << object_dim << "\n"
       << "object_heads=" << object_heads << "\n"
       << "attr_out_per_group=" << attr_out_per_group << "\n"
       << "attr_hidden=" << attr_hidden << "\n"
       << "rel_hidden=" << join(rel_hidden) << "\n"
       << "rel_out=" << rel_out << "\n"
       << "out_hidden=" << out_hidden << "\n"
       << "share_attr=" << (share_attr ? 1 : 0) << "\n"
       << "share_rel=" << (share_rel ? 1 : 0) << "\n"
       << "panel_px=" << panel_px << "\n"
       << "conv_channels=" << join(conv_channels) << "\n";
    return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
    ModelConfig c;
    std::stringstream ss(text);
    for (std::string line; std::getline(ss, line);) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line without '=': '" + line + "'");
        const std::string key = line.substr(0, eq), v = line.substr(eq + 1);
        if (key == "object_dim") c.object_dim = parse_size(key, v);
        else if (key == "object_heads") c.object_heads = parse_size(key, v);
        else if (key == "attr_out_per_group") c.attr_out_per_group = parse_size(key, v);
        else if (key == "attr_hidden") c.attr_hidden = parse_size(key, v);
        else if (key == "rel_hidden") c.rel_hidden = parse_list(key, v);
        else if (key == "rel_out") c.rel_out = parse_size(key, v);
        else if (key == "out_hidden") c.out_hidden = parse_size(key, v);
        else if (key == "share_attr") c.share_attr = parse_bool(key, v);
        else if (key == "share_rel") c.share_rel = parse_bool(key, v);
        else if (key == "panel_px") c.panel_px = parse_size(key, v);
        else if (key == "conv_channels") c.conv_channels = parse_list(key, v);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    c.validate();
    return c;
}

SCLModel::SCLModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(derive_seed(seed, 0x5c1));
    std::size_t in_ch = 1, side = config_.panel_px;
    for (std::size_t i = 0; i < config_.conv_channels.size(); ++i) {
        convs_.emplace_back(params_, "object_net.conv" + std::to_string(i + 1), in_ch, config_.conv_channels[i], 2,
                            rng);
        in_ch = config_.conv_channels[i];
        side = (side - 1) / 2 + 1;
    }
    flat_dim_ = in_ch * side * side;
    object_fc_ = Linear(params_, "object_net.fc", flat_dim_, config_.object_dim, rng);
    object_fr_ = FRBlock(params_, "object_net.fr", config_.object_dim, rng);

    const std::size_t group_in = config_.object_dim / config_.object_heads;
    std::vector<std::size_t> attr_widths{group_in, config_.attr_hidden, config_.attr_out_per_group};
    attr_net_ = config_.share_attr ? Mlp(params_, "attr_net", attr_widths, rng)
                                   : Mlp(params_, "attr_net", attr_widths, config_.object_heads, rng);
    attr_fr_ = FRBlock(params_, "post_attr.fr", config_.attr_width(), rng);

    std::vector<std::size_t> rel_widths{kMatrixPanels};
    rel_widths.insert(rel_widths.end(), config_.rel_hidden.begin(), config_.rel_hidden.end());
    rel_widths.push_back(config_.rel_out);
    rel_net_ = config_.share_rel ? Mlp(params_, "rel_net", rel_widths, rng)
                                 : Mlp(params_, "rel_net", rel_widths, config_.attr_width(), rng);

    output_ = Mlp(params_, "output_net", {config_.relation_width(), config_.out_hidden, 1}, rng);
}

Var SCLModel::object_net_forward(Tape& tape, Var panels) const {
    const Shape& s = panels.shape();
    const std::size_t P = config_.panel_px;
    if (s.size() != 4 || s[1] != 1 || s[2] != P || s[3] != P)
        throw DimensionError("object net expects [B,1," + std::to_string(P) + "," + std::to_string(P) + "], got " +
                             shape_str(s));
    Var x = panels;
    for (const auto& conv : convs_) x = relu(conv(tape, x));
    x = reshape(x, {s[0], flat_dim_});
    x = relu(object_fc_(tape, x));
    return object_fr_(tape, x);
}

Var SCLModel::attribute_merge(Tape& tape, Var object) const {
    if (object.shape().size() != 2 || object.shape()[1] != config_.object_dim)
        throw DimensionError("attribute scatter expects width " + std::to_string(config_.object_dim) + ", got " +
                             shape_str(object.shape()));
    return scatter(tape, object, config_.object_heads, attr_net_);
}

Var SCLModel::attribute_scatter(Tape& tape, Var object) const { return attr_fr_(tape, attribute_merge(tape, object)); }

Var SCLModel::relation_scatter(Tape& tape, Var matrix_feats) const {
    const Shape& s = matrix_feats.shape();
    if (s.size() != 3 || s[1] != kMatrixPanels)
        throw ContractError("relation scatter needs [B,9,W] panel features, got " + shape_str(s));
    const std::size_t B = s[0], W = s[2];
    if (W != config_.attr_width())
        throw DimensionError("relation scatter expects width " + std::to_string(config_.attr_width()) + ", got " +
                             std::to_string(W));
    Var per_position = swap_last_axes(matrix_feats);  // [B,W,9]
    if (rel_net_.grouped()) return reshape(rel_net_(tape, per_position), {B, W * config_.rel_out});
    Var out = rel_net_(tape, reshape(per_position, {B * W, kMatrixPanels}));
    return reshape(out, {B, W * config_.rel_out});
}

Var SCLModel::score_matrix(Tape& tape, Var relation) const {
    if (relation.shape().size() != 2 || relation.shape()[1] != config_.relation_width())
        throw DimensionError("scorer expects width " + std::to_string(config_.relation_width()) + ", got " +
                             shape_str(relation.shape()));
    return output_(tape, relation);
}

std::vector<std::size_t> SCLModel::matrix_rows(std::size_t problems) {
    std::vector<std::size_t> rows;
    rows.reserve(problems * kCandidates * kMatrixPanels);
    for (std::size_t n = 0; n < problems; ++n) {
        const std::size_t base = n * kPanelsPerProblem;
        for (std::size_t k = 0; k < kCandidates; ++k) {
            for (std::size_t c = 0; c < kContextPanels; ++c) rows.push_back(base + c);
            rows.push_back(base + kContextPanels + k);
        }
    }
    return rows;
}

ForwardTrace SCLModel::forward(Tape& tape, const Tensor& panels) const {
    if (panels.rank() != 4 || panels.dim(0) % kPanelsPerProblem != 0)
        throw DimensionError("forward expects [N*16,1,P,P] panels, got " + shape_str(panels.shape()));
    const std::size_t N = panels.dim(0) / kPanelsPerProblem;
    ForwardTrace tr;
    tr.object = object_net_forward(tape, tape.constant(panels));
    tr.attr_merged = attribute_merge(tape, tr.object);
    tr.attr = attr_fr_(tape, tr.attr_merged);
    Var matrices = gather_rows(tr.attr, matrix_rows(N));
    matrices = reshape(matrices, {N * kCandidates, kMatrixPanels, config_.attr_width()});
    tr.relation = relation_scatter(tape, matrices);
    Var scores = score_matrix(tape, tr.relation);
    tr.scores = reshape(scores, {N, kCandidates});
    return tr;
}

Var SCLModel::loss(Tape& tape, const Tensor& panels, std::span<const int> answers) const {
    return softmax_cross_entropy(forward(tape, panels).scores, answers);
}

Tensor SCLModel::predict(const Tensor& panels) const {
    Tape tape(false);
    return softmax(forward(tape, panels).scores.value());
}

}  // namespace scl

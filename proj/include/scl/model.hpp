#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "scl/layers.hpp"
#include "scl/parameter.hpp"
#include "scl/tape.hpp"

namespace scl {

inline constexpr std::size_t kContextPanels = 8;
inline constexpr std::size_t kCandidates = 8;
inline constexpr std::size_t kPanelsPerProblem = kContextPanels + kCandidates;
inline constexpr std::size_t kMatrixPanels = 9;

struct ModelConfig {
    std::size_t object_dim = 80;
    std::size_t object_heads = 10;
    std::size_t attr_out_per_group = 8;
    std::size_t attr_hidden = 128;
    std::vector<std::size_t> rel_hidden{64, 32};
    std::size_t rel_out = 5;
    std::size_t out_hidden = 128;
    bool share_attr = true;
    bool share_rel = true;
    std::size_t panel_px = 32;
    std::vector<std::size_t> conv_channels{16, 16, 32, 32};

    std::size_t attr_width() const { return object_heads * attr_out_per_group; }
    std::size_t relation_width() const { return attr_width() * rel_out; }
    /// Throws ConfigError on inconsistent widths.
    void validate() const;

    /// Flat "key=value" lines; round-trips through parse().
    std::string to_text() const;
    static ModelConfig parse(const std::string& text);
};

/// Intermediate activations of one forward pass over N problems.
struct ForwardTrace {
    Var object;        // [N*16, object_dim]
    Var attr_merged;   // [N*16, attr_width] before the post-merge FR block
    Var attr;          // [N*16, attr_width] fed to relation scattering
    Var relation;      // [N*8, attr_width*rel_out]
    Var scores;        // [N, 8]
};

/// Scattering Compositional Learner.
///
/// Panels of one problem are laid out as 8 context panels (row-major matrix
/// positions 1..8) followed by 8 candidates. Object and attribute features are
/// computed once per panel; each candidate then fills position 9 of its own
/// copy of the matrix.
class SCLModel {
public:
    SCLModel(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    ParameterStore& params() { return params_; }
    const ParameterStore& params() const { return params_; }

    Var object_net_forward(Tape& tape, Var panels) const;
    /// Scatter with the attribute network and merge; no post-merge FR block.
    Var attribute_merge(Tape& tape, Var object) const;
    /// attribute_merge followed by the post-merge FR block.
    Var attribute_scatter(Tape& tape, Var object) const;
    /// [B,9,W] -> [B, W*rel_out]
    Var relation_scatter(Tape& tape, Var matrix_feats) const;
    Var score_matrix(Tape& tape, Var relation) const;

    /// panels: [N*16,1,P,P] in [0,1].
    ForwardTrace forward(Tape& tape, const Tensor& panels) const;
    Var loss(Tape& tape, const Tensor& panels, std::span<const int> answers) const;
    /// Softmax probabilities over candidates, [N,8].
    Tensor predict(const Tensor& panels) const;

    const Mlp& attr_net() const { return attr_net_; }
    const Mlp& rel_net() const { return rel_net_; }
    const FRBlock& object_fr() const { return object_fr_; }
    const FRBlock& attr_fr() const { return attr_fr_; }
    const Mlp& output_net() const { return output_; }

    /// Row indices that assemble 8 filled matrices per problem from 16 panel rows.
    static std::vector<std::size_t> matrix_rows(std::size_t problems);

private:
    ModelConfig config_;
    ParameterStore params_;
    std::vector<Conv3x3> convs_;
    Linear object_fc_;
    FRBlock object_fr_;
    Mlp attr_net_;
    FRBlock attr_fr_;
    Mlp rel_net_;
    Mlp output_;
    std::size_t flat_dim_ = 0;
};

}  // namespace scl

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scl/rng.hpp"

namespace scl::rpm {

enum class Attribute { Type = 0, Size = 1, Color = 2 };
inline constexpr int kAttributeCount = 3;
inline constexpr std::array<Attribute, 3> kAttributes{Attribute::Type, Attribute::Size, Attribute::Color};
/// Largest value of each attribute's global domain (all domains start at 0).
inline constexpr std::array<int, 3> kDomainMax{4, 5, 9};

enum class RelationKind { Constant, Progression, Arithmetic, DistributeThree };
inline constexpr std::array<RelationKind, 4> kRelationKinds{RelationKind::Constant, RelationKind::Progression,
                                                            RelationKind::Arithmetic, RelationKind::DistributeThree};

/// `param` is the step for Progression (-2,-1,+1,+2) and the sign for Arithmetic (+1,-1).
struct Relation {
    RelationKind kind = RelationKind::Constant;
    int param = 0;
    bool operator==(const Relation&) const = default;
};

enum class Layout { Center, LeftRight, UpDown, OutInCenter };
inline constexpr std::array<Layout, 4> kLayouts{Layout::Center, Layout::LeftRight, Layout::UpDown,
                                                Layout::OutInCenter};

struct RuleSpec {
    int component = 0;
    Attribute attribute = Attribute::Type;
    Relation relation;
    bool operator==(const RuleSpec&) const = default;
};

/// Attribute values of one object, indexed by Attribute.
using Object = std::array<int, 3>;
/// One object per component.
using Panel = std::vector<Object>;

struct ProblemSpec {
    Layout layout = Layout::Center;
    std::vector<RuleSpec> rules;
    std::array<Panel, 9> panels;  // row-major; panels[8] is the answer
    std::array<Panel, 8> candidates;
    int answer_index = 0;
    std::uint64_t rng_seed = 0;
    bool operator==(const ProblemSpec&) const = default;
};

/// (attribute, relation kind) pair used by held-out filters.
struct Pair {
    Attribute attribute;
    RelationKind relation;
    bool operator==(const Pair&) const = default;
};

enum class FilterMode { Exclude, Require };

struct HeldoutFilter {
    FilterMode mode = FilterMode::Exclude;
    std::vector<Pair> pairs;
};

/// Inclusive value range of one attribute of one component.
struct Domain {
    int lo = 0;
    int hi = 0;
    int size() const { return hi - lo + 1; }
    bool contains(int v) const { return v >= lo && v <= hi; }
};

std::string to_string(Attribute a);
std::string to_string(RelationKind r);
std::string to_string(Layout l);
std::string to_string(const Relation& r);
Attribute parse_attribute(const std::string& s);
RelationKind parse_relation_kind(const std::string& s);
Layout parse_layout(const std::string& s);
/// "color:progression"
Pair parse_pair(const std::string& s);

int component_count(Layout layout);
/// Per-component domain. The O-IC outer frame is restricted so the inner
/// object always fits inside it, and its colour is pinned to 0 (outline only).
Domain domain(Layout layout, int component, Attribute a);
/// Attributes of a component that rules may govern (domain size > 1).
std::vector<Attribute> governable(Layout layout, int component);
/// Relations admitting at least one in-domain row for that domain.
std::vector<Relation> admissible_relations(Attribute a, Domain d);

using Row = std::array<int, 3>;
using Rows = std::array<Row, 3>;

/// Predicate on one row. DistributeThree needs the other rows and throws
/// ContractError here; use the Rows overload. Out-of-domain values throw DomainError.
bool relation_holds(const Relation& rel, const Row& row, Domain d);
/// True when the relation holds on all three rows.
bool relation_holds(const Relation& rel, const Rows& rows, Domain d);
/// Checks a rule on all three rows of a completed matrix.
bool rule_holds(const RuleSpec& rule, const std::array<Panel, 9>& panels, Layout layout);
/// True when every rule holds with `candidate` at position 9.
bool satisfies_all(const ProblemSpec& p, const Panel& candidate);

/// rel_count: governed attributes per component (clamped to what the component offers).
std::vector<RuleSpec> sample_rules(Layout layout, Rng& rng, const std::optional<HeldoutFilter>& heldout = {},
                                   int rel_count = 3);

/// Rows of one attribute under a relation, sampled by rejection.
Rows sample_rows(const Relation& rel, Domain d, Rng& rng, int& attempts);

/// Seven distractors forming, with the answer, a balanced attribute grid
/// (see generator.cpp). Each differs from the answer in a governed attribute.
std::array<Panel, 7> make_distractors(const Panel& answer, const std::vector<RuleSpec>& rules, Layout layout,
                                      Rng& rng);

/// With render_px > 0, problems whose 8 candidates do not render to 8
/// distinct images at that resolution are rejected and redrawn.
ProblemSpec generate_problem(Layout layout, std::uint64_t seed, const std::optional<HeldoutFilter>& heldout = {},
                             int rel_count = 3, int render_px = 0);

/// Picks the candidate whose attribute values are most common among the 8
/// candidates (ties broken uniformly). A balanced set leaves this at chance.
int context_blind_guess(const ProblemSpec& p, Rng& rng);

}  // namespace scl::rpm

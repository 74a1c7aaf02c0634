#include <algorithm>
#include <map>
#include <numeric>
#include <span>

#include "scl/errors.hpp"
#include "scl/render.hpp"
#include "scl/rpm.hpp"

namespace scl::rpm {

namespace {

constexpr int kAttemptBudget = 1000;

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

void check_domain(const Row& row, Domain d) {
    for (int v : row)
        if (!d.contains(v))
            throw DomainError("attribute value " + std::to_string(v) + " outside [" + std::to_string(d.lo) + "," +
                              std::to_string(d.hi) + "]");
}

// Governed (component, attribute) slots of a rule set.
struct Slot {
    int component;
    Attribute attribute;
};

std::vector<Slot> governed_slots(const std::vector<RuleSpec>& rules) {
    std::vector<Slot> out;
    for (const auto& r : rules) out.push_back({r.component, r.attribute});
    return out;
}

bool is_governed(const std::vector<RuleSpec>& rules, int component, Attribute a) {
    return std::any_of(rules.begin(), rules.end(),
                       [&](const RuleSpec& r) { return r.component == component && r.attribute == a; });
}

int& at(Panel& p, int component, Attribute a) { return p[static_cast<std::size_t>(component)][static_cast<int>(a)]; }
int at(const Panel& p, int component, Attribute a) {
    return p[static_cast<std::size_t>(component)][static_cast<int>(a)];
}

// `count` distinct values of `d` other than `avoid`, in random order.
std::vector<int> alternatives(Domain d, int avoid, std::size_t count, Rng& rng) {
    std::vector<int> pool;
    for (int v = d.lo; v <= d.hi; ++v)
        if (v != avoid) pool.push_back(v);
    rng.shuffle(pool);
    if (pool.size() > count) pool.resize(count);
    return pool;
}

// Fresh values for every attribute that no rule governs (noise attributes).
void resample_noise(Panel& panel, const std::vector<RuleSpec>& rules, Layout layout, Rng& rng) {
    for (int c = 0; c < component_count(layout); ++c)
        for (Attribute a : kAttributes) {
            const Domain d = domain(layout, c, a);
            if (!is_governed(rules, c, a)) at(panel, c, a) = rng.uniform_int(d.lo, d.hi);
        }
}

}  // namespace

std::string to_string(Attribute a) {
    switch (a) {
        case Attribute::Type: return "type";
        case Attribute::Size: return "size";
        case Attribute::Color: return "color";
    }
    return "?";
}

std::string to_string(RelationKind r) {
    switch (r) {
        case RelationKind::Constant: return "constant";
        case RelationKind::Progression: return "progression";
        case RelationKind::Arithmetic: return "arithmetic";
        case RelationKind::DistributeThree: return "distribute_three";
    }
    return "?";
}

std::string to_string(Layout l) {
    switch (l) {
        case Layout::Center: return "center";
        case Layout::LeftRight: return "lr";
        case Layout::UpDown: return "ud";
        case Layout::OutInCenter: return "oic";
    }
    return "?";
}

std::string to_string(const Relation& r) {
    std::string s = to_string(r.kind);
    if (r.kind == RelationKind::Progression) s += (r.param > 0 ? "(+" : "(") + std::to_string(r.param) + ")";
    if (r.kind == RelationKind::Arithmetic) s += r.param > 0 ? "(+)" : "(-)";
    return s;
}

Attribute parse_attribute(const std::string& s) {
    const std::string l = lower(s);
    for (Attribute a : kAttributes)
        if (to_string(a) == l) return a;
    throw ConfigError("unknown attribute '" + s + "' (expected type, size or color)");
}

RelationKind parse_relation_kind(const std::string& s) {
    const std::string l = lower(s);
    if (l == "union" || l == "distribute3" || l == "distributethree") return RelationKind::DistributeThree;
    for (RelationKind r : kRelationKinds)
        if (to_string(r) == l) return r;
    throw ConfigError("unknown relation '" + s + "'");
}

Layout parse_layout(const std::string& s) {
    const std::string l = lower(s);
    for (Layout x : kLayouts)
        if (to_string(x) == l) return x;
    throw ConfigError("unknown layout '" + s + "' (expected center, lr, ud or oic)");
}

Pair parse_pair(const std::string& s) {
    const auto colon = s.find(':');
    if (colon == std::string::npos) throw ConfigError("expected ATTRIBUTE:RELATION, got '" + s + "'");
    return {parse_attribute(s.substr(0, colon)), parse_relation_kind(s.substr(colon + 1))};
}

int component_count(Layout layout) { return layout == Layout::Center ? 1 : 2; }

Domain domain(Layout layout, int component, Attribute a) {
    if (component < 0 || component >= component_count(layout))
        throw DomainError("component " + std::to_string(component) + " not in layout " + to_string(layout));
    if (layout == Layout::OutInCenter && component == 0) {
        switch (a) {
            case Attribute::Type: return {1, 4};   // no triangle: its incircle is too small for the inner object
            case Attribute::Size: return {3, 5};
            case Attribute::Color: return {0, 0};  // outline only
        }
    }
    return {0, kDomainMax[static_cast<int>(a)]};
}

std::vector<Attribute> governable(Layout layout, int component) {
    std::vector<Attribute> out;
    for (Attribute a : kAttributes)
        if (domain(layout, component, a).size() > 1) out.push_back(a);
    return out;
}

std::vector<Relation> admissible_relations(Attribute a, Domain d) {
    std::vector<Relation> out{{RelationKind::Constant, 0}};
    for (int step : {-2, -1, 1, 2})
        if (d.size() > 2 * std::abs(step)) out.push_back({RelationKind::Progression, step});
    if (a != Attribute::Type) {
        // Second operand >= 1 so the third panel never repeats the first.
        for (int sign : {1, -1}) {
            bool ok = false;
            for (int v1 = d.lo; v1 <= d.hi && !ok; ++v1)
                for (int v2 = std::max(1, d.lo); v2 <= d.hi && !ok; ++v2) ok = d.contains(v1 + sign * v2);
            if (ok) out.push_back({RelationKind::Arithmetic, sign});
        }
    }
    if (d.size() >= 3) out.push_back({RelationKind::DistributeThree, 0});
    return out;
}

bool relation_holds(const Relation& rel, const Row& row, Domain d) {
    check_domain(row, d);
    const auto [v1, v2, v3] = row;
    switch (rel.kind) {
        case RelationKind::Constant: return v1 == v2 && v2 == v3;
        case RelationKind::Progression: return v2 == v1 + rel.param && v3 == v2 + rel.param;
        case RelationKind::Arithmetic: return v3 == v1 + rel.param * v2;
        case RelationKind::DistributeThree:
            throw ContractError("distribute_three is a predicate over all three rows");
    }
    return false;
}

bool relation_holds(const Relation& rel, const Rows& rows, Domain d) {
    if (rel.kind != RelationKind::DistributeThree)
        return std::all_of(rows.begin(), rows.end(), [&](const Row& r) { return relation_holds(rel, r, d); });
    for (const Row& r : rows) check_domain(r, d);
    Row first = rows[0];
    std::sort(first.begin(), first.end());
    if (first[0] == first[1] || first[1] == first[2]) return false;
    for (const Row& r : rows) {
        Row s = r;
        std::sort(s.begin(), s.end());
        if (s != first) return false;
    }
    return true;
}

bool rule_holds(const RuleSpec& rule, const std::array<Panel, 9>& panels, Layout layout) {
    Rows rows{};
    for (int i = 0; i < 9; ++i) rows[i / 3][i % 3] = at(panels[i], rule.component, rule.attribute);
    return relation_holds(rule.relation, rows, domain(layout, rule.component, rule.attribute));
}

bool satisfies_all(const ProblemSpec& p, const Panel& candidate) {
    std::array<Panel, 9> filled = p.panels;
    filled[8] = candidate;
    return std::all_of(p.rules.begin(), p.rules.end(),
                       [&](const RuleSpec& r) { return rule_holds(r, filled, p.layout); });
}

std::vector<RuleSpec> sample_rules(Layout layout, Rng& rng, const std::optional<HeldoutFilter>& heldout,
                                   int rel_count) {
    if (rel_count < 1 || rel_count > 3) throw ConstraintError("rel_count must be in 1..3");
    const bool exclude = heldout && heldout->mode == FilterMode::Exclude;
    const bool require = heldout && heldout->mode == FilterMode::Require && !heldout->pairs.empty();
    auto listed = [&](Attribute a, RelationKind k) {
        return heldout && std::find(heldout->pairs.begin(), heldout->pairs.end(), Pair{a, k}) != heldout->pairs.end();
    };

    // Candidate relations per (component, attribute), exclusion applied.
    std::map<std::pair<int, Attribute>, std::vector<Relation>> options;
    for (int c = 0; c < component_count(layout); ++c)
        for (Attribute a : governable(layout, c)) {
            auto rels = admissible_relations(a, domain(layout, c, a));
            if (exclude)
                std::erase_if(rels, [&](const Relation& r) { return listed(a, r.kind); });
            if (rels.empty())
                throw ConstraintError("every relation for " + to_string(a) + " in layout " + to_string(layout) +
                                      " is excluded");
            options[{c, a}] = std::move(rels);
        }
    if (require) {
        bool feasible = false;
        for (const auto& [slot, rels] : options)
            for (const auto& r : rels) feasible = feasible || listed(slot.second, r.kind);
        if (!feasible) throw ConstraintError("required pair cannot occur in layout " + to_string(layout));
    }

    for (int attempt = 0; attempt < kAttemptBudget; ++attempt) {
        std::vector<RuleSpec> rules;
        for (int c = 0; c < component_count(layout); ++c) {
            std::vector<Attribute> attrs = governable(layout, c);
            if (static_cast<int>(attrs.size()) > rel_count) {
                rng.shuffle(attrs);
                attrs.resize(static_cast<std::size_t>(rel_count));
                std::sort(attrs.begin(), attrs.end());
            }
            for (Attribute a : attrs) {
                const auto& rels = options.at({c, a});
                // Uniform over relation kinds, then over that kind's parameters.
                std::vector<RelationKind> kinds;
                for (const auto& r : rels)
                    if (std::find(kinds.begin(), kinds.end(), r.kind) == kinds.end()) kinds.push_back(r.kind);
                const RelationKind kind = rng.pick(kinds);
                std::vector<Relation> params;
                for (const auto& r : rels)
                    if (r.kind == kind) params.push_back(r);
                rules.push_back({c, a, rng.pick(params)});
            }
        }
        if (!require || std::any_of(rules.begin(), rules.end(), [&](const RuleSpec& r) {
                return listed(r.attribute, r.relation.kind);
            }))
            return rules;
    }
    throw ConstraintError("could not satisfy the required pair within " + std::to_string(kAttemptBudget) +
                          " attempts");
}

Rows sample_rows(const Relation& rel, Domain d, Rng& rng, int& attempts) {
    Rows rows{};
    auto spend = [&] {
        if (++attempts > kAttemptBudget)
            throw GenerationError("row sampling for " + to_string(rel) + " exceeded " +
                                  std::to_string(kAttemptBudget) + " attempts");
    };
    switch (rel.kind) {
        case RelationKind::Constant:
            for (Row& r : rows) r.fill(rng.uniform_int(d.lo, d.hi));
            break;
        case RelationKind::Progression:
            for (Row& r : rows) {
                int v;
                do {
                    spend();
                    v = rng.uniform_int(d.lo, d.hi);
                } while (!d.contains(v + 2 * rel.param));
                r = {v, v + rel.param, v + 2 * rel.param};
            }
            break;
        case RelationKind::Arithmetic:
            for (Row& r : rows) {
                int v1, v2;
                do {
                    spend();
                    v1 = rng.uniform_int(d.lo, d.hi);
                    v2 = rng.uniform_int(std::max(1, d.lo), d.hi);
                } while (!d.contains(v1 + rel.param * v2));
                r = {v1, v2, v1 + rel.param * v2};
            }
            break;
        case RelationKind::DistributeThree: {
            if (d.size() < 3) throw GenerationError("distribute_three needs three distinct values");
            std::vector<int> vals(static_cast<std::size_t>(d.size()));
            std::iota(vals.begin(), vals.end(), d.lo);
            rng.shuffle(vals);
            const int dir = rng.uniform_int(1, 2);  // rotate left or right between rows
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) rows[i][j] = vals[static_cast<std::size_t>((j + dir * i) % 3)];
            break;
        }
    }
    return rows;
}

// Balanced grid: the answer and its 7 distractors form the full product of
// binary (or, with fewer governed slots, 4- or 8-level) variations of a few
// governed slots, so every varied value occurs equally often across the 8
// candidates and candidate statistics alone carry no information.
std::array<Panel, 7> make_distractors(const Panel& answer, const std::vector<RuleSpec>& rules, Layout layout,
                                      Rng& rng) {
    std::vector<Slot> slots = governed_slots(rules);
    if (slots.empty()) throw GenerationError("distractors need at least one governed attribute");
    rng.shuffle(slots);
    auto dom = [&](const Slot& s) { return domain(layout, s.component, s.attribute); };

    // levels[i]: values slot i takes across the grid, answer value first.
    std::vector<Slot> varied;
    std::vector<std::vector<int>> levels;
    auto add = [&](const Slot& s, std::size_t alts) {
        std::vector<int> v{at(answer, s.component, s.attribute)};
        for (int x : alternatives(dom(s), v[0], alts, rng)) v.push_back(x);
        varied.push_back(s);
        levels.push_back(std::move(v));
    };

    if (slots.size() >= 3) {
        for (std::size_t i = 0; i < 3; ++i) add(slots[i], 1);
    } else if (slots.size() == 2) {
        // The 4-level slot needs at least four values.
        if (dom(slots[0]).size() < 4) std::swap(slots[0], slots[1]);
        if (dom(slots[0]).size() < 4) throw GenerationError("domains too small for a balanced candidate set");
        add(slots[0], 3);
        add(slots[1], 1);
    } else {
        add(slots[0], 7);
    }

    std::vector<Panel> grid;
    std::size_t combos = 1;
    for (const auto& l : levels) combos *= l.size();
    for (std::size_t code = 1; code < combos; ++code) {
        Panel p = answer;
        std::size_t rest = code;
        for (std::size_t i = 0; i < varied.size(); ++i) {
            at(p, varied[i].component, varied[i].attribute) = levels[i][rest % levels[i].size()];
            rest /= levels[i].size();
        }
        grid.push_back(std::move(p));
    }
    // A single slot with fewer than 8 values cannot be balanced; cycle through
    // its alternatives (noise attributes keep such candidates apart).
    for (std::size_t i = 0; grid.size() < 7; ++i) grid.push_back(grid[i]);

    std::array<Panel, 7> out;
    for (std::size_t i = 0; i < 7; ++i) {
        out[i] = std::move(grid[i]);
        resample_noise(out[i], rules, layout, rng);
    }
    return out;
}

namespace {

ProblemSpec draw_problem(Layout layout, Rng& rng, const std::optional<HeldoutFilter>& heldout, int rel_count) {
    ProblemSpec p;
    p.layout = layout;
    p.rules = sample_rules(layout, rng, heldout, rel_count);

    const int comps = component_count(layout);
    for (Panel& panel : p.panels) panel.assign(static_cast<std::size_t>(comps), Object{});
    int attempts = 0;
    for (int c = 0; c < comps; ++c)
        for (Attribute a : kAttributes) {
            const Domain d = domain(layout, c, a);
            const auto rule = std::find_if(p.rules.begin(), p.rules.end(), [&](const RuleSpec& r) {
                return r.component == c && r.attribute == a;
            });
            if (rule == p.rules.end()) {
                for (Panel& panel : p.panels) at(panel, c, a) = rng.uniform_int(d.lo, d.hi);
                continue;
            }
            const Rows rows = sample_rows(rule->relation, d, rng, attempts);
            for (int i = 0; i < 9; ++i) at(p.panels[i], c, a) = rows[i / 3][i % 3];
        }

    const Panel& answer = p.panels[8];
    std::array<Panel, 7> distractors = make_distractors(answer, p.rules, layout, rng);
    rng.shuffle(std::span<Panel>(distractors));
    p.answer_index = static_cast<int>(rng.below(8));
    for (int k = 0, d = 0; k < 8; ++k) p.candidates[k] = k == p.answer_index ? answer : distractors[d++];

    int passing = 0;
    for (const Panel& cand : p.candidates) passing += satisfies_all(p, cand) ? 1 : 0;
    if (passing != 1 || !satisfies_all(p, answer))
        throw GenerationError("candidate set is not uniquely solvable (" + std::to_string(passing) +
                              " candidates pass)");
    return p;
}

bool candidates_render_distinct(const ProblemSpec& p, int px) {
    std::vector<std::vector<std::uint8_t>> imgs;
    for (const Panel& c : p.candidates) imgs.push_back(render_panel(c, p.layout, px));
    std::sort(imgs.begin(), imgs.end());
    return std::adjacent_find(imgs.begin(), imgs.end()) == imgs.end();
}

}  // namespace

ProblemSpec generate_problem(Layout layout, std::uint64_t seed, const std::optional<HeldoutFilter>& heldout,
                             int rel_count, int render_px) {
    Rng rng(seed);
    for (int attempt = 0; attempt < kAttemptBudget; ++attempt) {
        ProblemSpec p = draw_problem(layout, rng, heldout, rel_count);
        p.rng_seed = seed;
        if (render_px <= 0 || candidates_render_distinct(p, render_px)) return p;
    }
    throw GenerationError("no visually distinct candidate set within " + std::to_string(kAttemptBudget) +
                          " attempts");
}

int context_blind_guess(const ProblemSpec& p, Rng& rng) {
    std::array<int, 8> score{};
    for (int k = 0; k < 8; ++k)
        for (std::size_t c = 0; c < p.candidates[k].size(); ++c)
            for (int a = 0; a < kAttributeCount; ++a)
                for (int j = 0; j < 8; ++j) score[k] += p.candidates[j][c][a] == p.candidates[k][c][a] ? 1 : 0;
    const int best = *std::max_element(score.begin(), score.end());
    std::vector<int> ties;
    for (int k = 0; k < 8; ++k)
        if (score[k] == best) ties.push_back(k);
    return rng.pick(ties);
}

}  // namespace scl::rpm

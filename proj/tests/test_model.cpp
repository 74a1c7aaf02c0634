// SCL architecture: block semantics, scattering contracts, prediction path.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "scl/errors.hpp"
#include "scl/grad_check.hpp"
#include "scl/model.hpp"

using namespace scl;

namespace {

constexpr bool kDouble = sizeof(Real) == 8;

Tensor random_tensor(Shape shape, std::uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (Real& v : t.data()) v = rng.uniform_float(lo, hi);
    return t;
}

void set_identity(Tensor& w, Real scale = 1) {
    w.fill(0);
    const std::size_t n = std::min(w.dim(0), w.dim(1));
    for (std::size_t i = 0; i < n; ++i) w[i * w.dim(1) + i] = scale;
}

Tensor eval(const std::function<Var(Tape&)>& f) {
    Tape tape(false);
    return f(tape).value();
}

// Row-wise group permutation of a [B, m*G] tensor: output group g takes input group perm[g].
Tensor permute_groups(const Tensor& x, const std::vector<std::size_t>& perm) {
    const std::size_t B = x.dim(0), D = x.dim(1), G = D / perm.size();
    Tensor out(x.shape());
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t g = 0; g < perm.size(); ++g)
            for (std::size_t k = 0; k < G; ++k) out[b * D + g * G + k] = x[b * D + perm[g] * G + k];
    return out;
}

ModelConfig small_config() {
    ModelConfig c;
    c.panel_px = 16;
    return c;
}

Tensor random_panels(std::size_t problems, std::size_t px, std::uint64_t seed) {
    return random_tensor({problems * kPanelsPerProblem, 1, px, px}, seed, 0.0f, 1.0f);
}

}  // namespace

TEST_CASE("FR block: zero inner weights give the identity") {
    ParameterStore store;
    Rng rng(1);
    FRBlock fr(store, "fr", 6, rng);
    fr.lin1().weight().value.fill(0);
    fr.lin2().weight().value.fill(0);
    Tensor x = random_tensor({3, 6}, 2);
    Tensor y = eval([&](Tape& t) { return fr(t, t.constant(x)); });
    CHECK(y == x);
}

TEST_CASE("FR block: residual path carries gradient when the inner path is dead") {
    ParameterStore store;
    Rng rng(3);
    FRBlock fr(store, "fr", 5, rng);
    fr.lin1().bias().value.fill(-100);  // ReLU never fires
    Tape tape;
    Var x = tape.leaf(random_tensor({2, 5}, 4));
    Var y = fr(tape, x);
    Tensor seed = random_tensor({2, 5}, 5);
    tape.backward(y, seed);
    CHECK(x.grad() == seed);
}

TEST_CASE("FR block: width mismatch and finite differences") {
    ParameterStore store;
    Rng rng(6);
    FRBlock fr(store, "fr", 7, rng);
    {
        Tape tape;
        CHECK_THROWS_AS(fr(tape, tape.constant(Tensor({2, 6}))), DimensionError);
    }
    GradCheckOptions o;
    o.tolerance = kDouble ? 1e-3 : 1e-2;
    o.kink_fraction = o.tolerance;
    if (kDouble) o.step = 1e-6;
    auto rep = grad_check([&](Tape& t, Var x) { return fr(t, x); }, random_tensor({4, 7}, 7), o);
    INFO(rep.summary());
    CHECK(rep.passed());
    for (Parameter& p : store) {
        auto r = grad_check_parameter(
            [&](Tape& t) {
                Var y = fr(t, t.constant(random_tensor({4, 7}, 8)));
                return sum(scale(relu(y), 0.5f));
            },
            p, store, o);
        INFO(r.summary());
        CHECK(r.passed());
    }
}

TEST_CASE("object net: shape trace for 32 px panels") {
    SCLModel model(ModelConfig{}, 1);
    // 32 -> 16 -> 8 -> 4 -> 2 spatially, 32 channels: flatten width 128.
    CHECK(model.params().find("object_net.fc.weight")->value.shape() == Shape{128, 80});
    CHECK(model.params().find("object_net.conv4.weight")->value.shape() == Shape{32, 32, 3, 3});
    Tensor out = eval([&](Tape& t) {
        return model.object_net_forward(t, t.constant(random_tensor({3, 1, 32, 32}, 9, 0, 1)));
    });
    CHECK(out.shape() == Shape{3, 80});
    Tape tape;
    CHECK_THROWS_AS(model.object_net_forward(tape, tape.constant(Tensor({1, 1, 30, 30}))), DimensionError);
}

TEST_CASE("object net: zero panel with zero biases maps to zero") {
    SCLModel model(ModelConfig{}, 2);
    Tensor out = eval([&](Tape& t) { return model.object_net_forward(t, t.constant(Tensor({2, 1, 32, 32}))); });
    for (Real v : out.data()) CHECK(v == 0);
}

TEST_CASE("object net: identical panels give identical features") {
    SCLModel model(ModelConfig{}, 3);
    Tensor one = random_tensor({1, 1, 32, 32}, 10, 0, 1);
    Tensor two({2, 1, 32, 32});
    std::copy(one.data().begin(), one.data().end(), two.data().begin());
    std::copy(one.data().begin(), one.data().end(), two.data().begin() + 1024);
    Tensor out = eval([&](Tape& t) { return model.object_net_forward(t, t.constant(two)); });
    CHECK(std::equal(out.data().begin(), out.data().begin() + 80, out.data().begin() + 80));
}

TEST_CASE("scatter: identity and doubling networks") {
    ParameterStore store;
    Rng rng(4);
    Mlp ident(store, "id", {4, 4}, rng);
    set_identity(ident.layers()[0].weight().value);
    Tensor x = random_tensor({3, 20}, 11);
    CHECK(eval([&](Tape& t) { return scatter(t, t.constant(x), 5, ident); }) == x);

    Mlp twice(store, "twice", {2, 2}, rng);
    set_identity(twice.layers()[0].weight().value, 2);
    Tensor y = eval([&](Tape& t) { return scatter(t, t.constant(Tensor::from({1, 4}, {1, 2, 3, 4})), 2, twice); });
    CHECK(y == Tensor::from({1, 4}, {2, 4, 6, 8}));

    Tape tape;
    CHECK_THROWS_AS(scatter(tape, tape.constant(Tensor({1, 10})), 3, twice), DimensionError);
}

TEST_CASE("scatter: permuting input groups permutes output groups") {
    ParameterStore store;
    Rng rng(5);
    Mlp net(store, "net", {8, 16, 3}, rng);
    Tensor x = random_tensor({4, 80}, 12);
    std::vector<std::size_t> perm(10);
    std::iota(perm.begin(), perm.end(), 0);
    Rng prng(13);
    prng.shuffle(perm);
    Tensor a = eval([&](Tape& t) { return scatter(t, t.constant(permute_groups(x, perm)), 10, net); });
    Tensor b = permute_groups(eval([&](Tape& t) { return scatter(t, t.constant(x), 10, net); }), perm);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-6));
}

TEST_CASE("attribute scatter: composed identities reproduce the input") {
    SCLModel model(ModelConfig{}, 4);
    // relu(v) - relu(-v) = v through the 8 -> 128 -> 8 network.
    Tensor& w1 = model.params().find("attr_net.fc1.weight")->value;  // [8,128]
    Tensor& w2 = model.params().find("attr_net.fc2.weight")->value;  // [128,8]
    w1.fill(0);
    w2.fill(0);
    for (std::size_t i = 0; i < 8; ++i) {
        w1[i * 128 + i] = 1;
        w1[i * 128 + 8 + i] = -1;
        w2[i * 8 + i] = 1;
        w2[(8 + i) * 8 + i] = -1;
    }
    model.params().find("post_attr.fr.lin1.weight")->value.fill(0);
    model.params().find("post_attr.fr.lin2.weight")->value.fill(0);
    Tensor x = random_tensor({5, 80}, 14);
    Tensor y = eval([&](Tape& t) { return model.attribute_scatter(t, t.constant(x)); });
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-6));
}

TEST_CASE("attribute scatter: equivariant before the FR block, mixed after it") {
    SCLModel model(ModelConfig{}, 5);
    Tensor x = random_tensor({4, 80}, 15);
    std::vector<std::size_t> perm{1, 0, 2, 3, 4, 5, 6, 7, 8, 9};
    Tensor px = permute_groups(x, perm);

    Tensor merged = eval([&](Tape& t) { return model.attribute_merge(t, t.constant(x)); });
    Tensor merged_p = eval([&](Tape& t) { return model.attribute_merge(t, t.constant(px)); });
    Tensor expect = permute_groups(merged, perm);
    for (std::size_t i = 0; i < expect.numel(); ++i) CHECK(merged_p[i] == doctest::Approx(expect[i]).epsilon(1e-6));

    Tensor full = permute_groups(eval([&](Tape& t) { return model.attribute_scatter(t, t.constant(x)); }), perm);
    Tensor full_p = eval([&](Tape& t) { return model.attribute_scatter(t, t.constant(px)); });
    double diff = 0;
    for (std::size_t i = 0; i < full.numel(); ++i) diff = std::max(diff, double(std::abs(full[i] - full_p[i])));
    CHECK(diff > 1e-3);
}

TEST_CASE("attribute scatter: width 80 for any batch size") {
    SCLModel model(ModelConfig{}, 6);
    for (std::size_t b : {1u, 7u}) {
        Tensor y = eval([&](Tape& t) { return model.attribute_scatter(t, t.constant(random_tensor({b, 80}, b))); });
        CHECK(y.shape() == Shape{b, 80});
    }
    Tape tape;
    CHECK_THROWS_AS(model.attribute_scatter(tape, tape.constant(Tensor({2, 64}))), DimensionError);
}

TEST_CASE("relation scatter: constant inputs give one repeated 5-vector") {
    SCLModel model(ModelConfig{}, 7);
    Tensor y = eval([&](Tape& t) { return model.relation_scatter(t, t.constant(Tensor({2, 9, 80}, 0.7f))); });
    REQUIRE(y.shape() == Shape{2, 400});
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t d = 0; d < 80; ++d)
            for (std::size_t k = 0; k < 5; ++k) CHECK(y[b * 400 + d * 5 + k] == y[k]);
}

TEST_CASE("relation scatter: swapping two positions swaps their output groups") {
    SCLModel model(ModelConfig{}, 8);
    Tensor x = random_tensor({3, 9, 80}, 16);
    Tensor xs = x;
    const std::size_t d1 = 4, d2 = 61;
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t p = 0; p < 9; ++p) std::swap(xs[(b * 9 + p) * 80 + d1], xs[(b * 9 + p) * 80 + d2]);
    Tensor y = eval([&](Tape& t) { return model.relation_scatter(t, t.constant(x)); });
    Tensor ys = eval([&](Tape& t) { return model.relation_scatter(t, t.constant(xs)); });
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t d = 0; d < 80; ++d) {
            const std::size_t src = d == d1 ? d2 : d == d2 ? d1 : d;
            for (std::size_t k = 0; k < 5; ++k)
                CHECK(ys[b * 400 + d * 5 + k] == doctest::Approx(y[b * 400 + src * 5 + k]).epsilon(1e-6));
        }
}

TEST_CASE("relation scatter: panel count contract") {
    SCLModel model(ModelConfig{}, 9);
    Tape tape;
    CHECK_THROWS_AS(model.relation_scatter(tape, tape.constant(Tensor({2, 8, 80}))), ContractError);
}

TEST_CASE("scorer: zero weights and identical inputs") {
    SCLModel model(ModelConfig{}, 10);
    Tensor rel = random_tensor({3, 400}, 17);
    std::copy(rel.data().begin(), rel.data().begin() + 400, rel.data().begin() + 400);
    Tensor s = eval([&](Tape& t) { return model.score_matrix(t, t.constant(rel)); });
    REQUIRE(s.shape() == Shape{3, 1});
    CHECK(s[0] == s[1]);
    for (const char* n : {"output_net.fc1.weight", "output_net.fc2.weight"}) model.params().find(n)->value.fill(0);
    Tensor z = eval([&](Tape& t) { return model.score_matrix(t, t.constant(rel)); });
    for (Real v : z.data()) CHECK(v == 0);
    Tape tape;
    CHECK_THROWS_AS(model.score_matrix(tape, tape.constant(Tensor({1, 399}))), DimensionError);
}

TEST_CASE("pipeline widths with the default config") {
    SCLModel model(ModelConfig{}, 11);
    Tape tape(false);
    ForwardTrace tr = model.forward(tape, random_panels(2, 32, 18));
    CHECK(tr.object.shape() == Shape{32, 80});
    CHECK(tr.attr.shape() == Shape{32, 80});
    CHECK(tr.relation.shape() == Shape{16, 400});
    CHECK(tr.scores.shape() == Shape{2, 8});
}

TEST_CASE("predict: probabilities form a distribution") {
    SCLModel model(small_config(), 12);
    Tensor p = model.predict(random_panels(3, 16, 19));
    REQUIRE(p.shape() == Shape{3, 8});
    for (std::size_t n = 0; n < 3; ++n) {
        double s = 0;
        for (std::size_t k = 0; k < 8; ++k) {
            CHECK(p[n * 8 + k] >= 0);
            s += p[n * 8 + k];
        }
        CHECK(s == doctest::Approx(1).epsilon(1e-5));
    }
}

TEST_CASE("predict: near-uniform for a zero-ish untrained model") {
    SCLModel model(ModelConfig{}, 13);
    for (Real& v : model.params().find("output_net.fc2.weight")->value.data()) v *= 0.01f;
    Tensor p = model.predict(random_panels(4, 32, 20));
    for (Real v : p.data()) CHECK(std::abs(v - 0.125) <= 0.05);
}

TEST_CASE("predict: permuting candidates permutes probabilities") {
    SCLModel model(small_config(), 14);
    Tensor panels = random_panels(2, 16, 21);
    const std::size_t px = 16 * 16;
    std::vector<std::size_t> perm{3, 7, 0, 5, 1, 6, 2, 4};
    Tensor permuted = panels;
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t k = 0; k < 8; ++k) {
            auto src = panels.data().begin() + static_cast<long>((n * 16 + 8 + perm[k]) * px);
            std::copy(src, src + static_cast<long>(px),
                      permuted.data().begin() + static_cast<long>((n * 16 + 8 + k) * px));
        }
    Tensor p = model.predict(panels);
    Tensor q = model.predict(permuted);
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t k = 0; k < 8; ++k) CHECK(q[n * 8 + k] == doctest::Approx(p[n * 8 + perm[k]]).epsilon(1e-6));
}

TEST_CASE("predict: bit-identical across repeated calls") {
    SCLModel a(small_config(), 15), b(small_config(), 15);
    Tensor panels = random_panels(2, 16, 22);
    CHECK(a.predict(panels) == b.predict(panels));
}

namespace {

std::size_t count_prefix(const ParameterStore& store, const std::string& prefix) {
    std::size_t n = 0;
    for (const Parameter& p : store)
        if (p.name.rfind(prefix, 0) == 0) n += p.value.numel();
    return n;
}

}  // namespace

TEST_CASE("sharing: attribute and relation parameter counts do not grow with group count") {
    for (std::size_t heads : {2u, 5u, 10u, 20u}) {
        ModelConfig c;
        c.object_heads = heads;
        const std::size_t g = 80 / heads;
        const std::size_t single = g * 128 + 128 + 128 * 8 + 8;
        CHECK(count_prefix(SCLModel(c, 1).params(), "attr_net.") == single);
        c.share_attr = false;
        CHECK(count_prefix(SCLModel(c, 1).params(), "attr_net.") == heads * single);
    }
    const std::size_t rel = 9 * 64 + 64 + 64 * 32 + 32 + 32 * 5 + 5;
    for (std::size_t dim : {40u, 80u}) {
        ModelConfig c;
        c.object_dim = dim;
        c.object_heads = dim / 8;
        CHECK(count_prefix(SCLModel(c, 1).params(), "rel_net.") == rel);
    }
}

TEST_CASE("sharing: shared gradient equals the sum of per-group gradients of a tied clone") {
    ModelConfig shared_cfg = small_config();
    ModelConfig split_cfg = shared_cfg;
    split_cfg.share_attr = false;
    split_cfg.share_rel = false;
    SCLModel shared(shared_cfg, 16), split(split_cfg, 17);

    // Tie every parameter of the clone to the shared model.
    for (Parameter& p : split.params()) {
        const Tensor& src = shared.params().find(p.name)->value;
        if (src.shape() == p.value.shape()) {
            p.value = src;
            continue;
        }
        const std::size_t groups = p.value.dim(0), n = src.numel();
        REQUIRE(p.value.numel() == groups * n);
        for (std::size_t g = 0; g < groups; ++g) std::copy(src.data().begin(), src.data().end(), &p.value[g * n]);
    }

    Tensor panels = random_panels(2, 16, 23);
    std::vector<int> answers{2, 5};
    for (SCLModel* m : {&shared, &split}) {
        m->params().zero_grad();
        Tape tape;
        Var loss = m->loss(tape, panels, answers);
        tape.backward(loss);
    }
    for (Parameter& p : split.params()) {
        const Parameter& s = *shared.params().find(p.name);
        if (s.value.shape() == p.value.shape()) continue;
        const std::size_t groups = p.value.dim(0), n = s.value.numel();
        double max_abs = 0;
        for (std::size_t i = 0; i < n; ++i) max_abs = std::max(max_abs, double(std::abs(s.grad[i])));
        for (std::size_t i = 0; i < n; ++i) {
            double total = 0;
            for (std::size_t g = 0; g < groups; ++g) total += p.grad[g * n + i];
            INFO(p.name, " coordinate ", i);
            CHECK(std::abs(total - s.grad[i]) <= 1e-4 * std::max(max_abs, 1e-3));
        }
    }
}

// Thousands of ReLUs sit inside any finite-difference window of 1e-3, so the
// whole-model check runs on the float64 build with a small step.
TEST_CASE("full model: every parameter gradient matches finite differences" * doctest::skip(!kDouble)) {
    SCLModel model(small_config(), 18);
    Tensor panels = random_panels(2, 16, 24);
    std::vector<int> answers{1, 6};
    GradCheckOptions o;
    o.step = 1e-6;
    o.tolerance = 1e-3;
    o.kink_fraction = o.tolerance;
    o.sample = 20;
    double worst = 0;
    for (Parameter& p : model.params()) {
        o.seed = std::hash<std::string>{}(p.name);
        auto rep = grad_check_parameter([&](Tape& t) { return model.loss(t, panels, answers); }, p,
                                        model.params(), o);
        INFO(rep.summary());
        CHECK(rep.passed());
        CHECK(rep.checked >= std::min<std::size_t>(15, p.value.numel()));
        worst = std::max(worst, rep.max_rel_error);
    }
    MESSAGE("full-model max relative error " << worst);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gradcheck.hpp"
#include "swin_oracle.hpp"
#include "swintempo/errors.hpp"
#include "swintempo/swin_encoder.hpp"

#include <cmath>
#include <numeric>

using namespace swintempo;
using namespace swintempo::testing;

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::abs(a[i] - b[i]));
    }
    return m;
}

Tensor identity_weight(std::size_t out, std::size_t in) {
    Tensor w({out, in}, 0.0);
    for (std::size_t i = 0; i < std::min(out, in); ++i) {
        w.mutable_values()[i * in + i] = 1.0;
    }
    return w;
}

}  // namespace

TEST_CASE("config validation") {
    CHECK_NOTHROW(SwinConfig{}.validate());
    CHECK_NOTHROW(SwinConfig::tiny().validate());
    SwinConfig bad = SwinConfig::tiny();
    bad.heads = {3, 2, 4, 8};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = SwinConfig::tiny();
    bad.depths = {1, 1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(SwinConfig{}.patch_dim() == 48);
    CHECK(SwinConfig{}.downsampling() == 32);
}

TEST_CASE("window partition geometry") {
    Rng rng(1);
    SUBCASE("56x56 with w=7 gives 64 windows of 49 tokens") {
        const auto layout = window_layout(56, 56, 7, false);
        const Tensor grid = random_tensor({56, 56, 3}, rng, 1.0, false);
        const Tensor w = window_partition(grid, layout);
        CHECK(w.shape() == Shape{64, 49, 3});
    }
    SUBCASE("7x7 with w=7 is a single window with no shift") {
        const auto layout = window_layout(7, 7, 7, true);
        CHECK(layout.n_windows() == 1);
        CHECK(layout.shift == 0);
    }
    SUBCASE("window shrinks to a smaller grid") {
        const auto layout = window_layout(2, 2, 4, true);
        CHECK(layout.window == 2);
        CHECK(layout.shift == 0);
    }
    SUBCASE("partition then unpartition is bit-identical") {
        for (std::size_t h : {4UL, 6UL, 9UL, 16UL}) {
            for (std::size_t w : {5UL, 8UL, 12UL}) {
                for (bool shifted : {false, true}) {
                    const auto layout = window_layout(h, w, 4, shifted);
                    const Tensor grid = random_tensor({h, w, 5}, rng, 1.0, false);
                    const Tensor back = window_unpartition(window_partition(grid, layout), layout, 5);
                    CHECK(std::equal(back.values().begin(), back.values().end(), grid.values().begin()));
                }
            }
        }
    }
    SUBCASE("every grid token appears exactly once among the windows") {
        const auto layout = window_layout(8, 8, 4, true);
        std::vector<double> ids(64);
        std::iota(ids.begin(), ids.end(), 1.0);
        const Tensor w = window_partition(Tensor({8, 8, 1}, ids), layout);
        std::vector<double> seen(w.values().begin(), w.values().end());
        std::sort(seen.begin(), seen.end());
        CHECK(seen == ids);
    }
}

TEST_CASE("shift mask separates rolled regions") {
    const auto layout = window_layout(8, 8, 4, true);
    const auto mask = shifted_window_mask(layout);
    REQUIRE(mask);
    CHECK(mask->size() == 4 * 16 * 16);
    // top-left window holds a single region: nothing masked
    CHECK(std::all_of(mask->begin(), mask->begin() + 256, [](double v) { return v == 0.0; }));
    // bottom-right window mixes four regions; diagonal stays open
    const double* last = mask->data() + 3 * 256;
    for (std::size_t i = 0; i < 16; ++i) {
        CHECK(last[i * 16 + i] == 0.0);
    }
    CHECK(std::isinf(last[0 * 16 + 3]));
    CHECK_FALSE(shifted_window_mask(window_layout(8, 8, 4, false)));
}

TEST_CASE("window attention special cases") {
    Rng rng(2);
    const std::size_t c = 4;
    ParamStore p;
    add_block(p, "b.", c, 2, 3, rng);
    const AttentionWeights weights = attention_weights(p, "b.attn.");
    auto value_projection = [&](std::span<const double> token) {
        const auto& w = weights.qkv_weight.values();
        const auto& b = weights.qkv_bias.values();
        std::vector<double> v(c);
        for (std::size_t o = 0; o < c; ++o) {
            v[o] = b[2 * c + o];
            for (std::size_t i = 0; i < c; ++i) {
                v[o] += w[(2 * c + o) * c + i] * token[i];
            }
        }
        std::vector<double> out(c);
        for (std::size_t o = 0; o < c; ++o) {
            out[o] = weights.proj_bias.values()[o];
            for (std::size_t i = 0; i < c; ++i) {
                out[o] += weights.proj_weight.values()[o * c + i] * v[i];
            }
        }
        return out;
    };

    SUBCASE("one token per window returns its projected value") {
        const Tensor windows = random_tensor({5, 1, c}, rng, 1.0, false);
        const Tensor out = window_attention(windows, weights, 2, 3, 1, nullptr);
        for (std::size_t n = 0; n < 5; ++n) {
            const auto expected = value_projection(windows.values().subspan(n * c, c));
            for (std::size_t e = 0; e < c; ++e) {
                CHECK(out[n * c + e] == doctest::Approx(expected[e]).epsilon(1e-12));
            }
        }
    }

    SUBCASE("zero query/key weights give uniform attention") {
        ParamStore q;
        add_block(q, "b.", c, 2, 3, rng);
        auto w = attention_weights(q, "b.attn.");
        auto qkv = w.qkv_weight.mutable_values();
        std::fill(qkv.begin(), qkv.begin() + 2 * c * c, 0.0);
        auto qb = w.qkv_bias.mutable_values();
        std::fill(qb.begin(), qb.begin() + 2 * c, 0.0);
        std::fill(w.bias_table.mutable_values().begin(), w.bias_table.mutable_values().end(), 0.0);
        const Tensor windows = random_tensor({2, 9, c}, rng, 1.0, false);
        std::vector<double> probs;
        const Tensor out = window_attention(windows, w, 2, 3, 3, nullptr, &probs);
        for (double pr : probs) {
            CHECK(pr == doctest::Approx(1.0 / 9.0).epsilon(1e-12));
        }
        // mean of value vectors, then output projection (linear, so order commutes)
        for (std::size_t n = 0; n < 2; ++n) {
            std::vector<double> mean_token(c, 0.0);
            for (std::size_t t = 0; t < 9; ++t) {
                for (std::size_t e = 0; e < c; ++e) {
                    mean_token[e] += windows[(n * 9 + t) * c + e] / 9.0;
                }
            }
            const auto ref = [&] {
                const auto& qw = w.qkv_weight.values();
                const auto& qbias = w.qkv_bias.values();
                std::vector<double> v(c), o(c);
                for (std::size_t a = 0; a < c; ++a) {
                    v[a] = qbias[2 * c + a];
                    for (std::size_t i = 0; i < c; ++i) {
                        v[a] += qw[(2 * c + a) * c + i] * mean_token[i];
                    }
                }
                for (std::size_t a = 0; a < c; ++a) {
                    o[a] = w.proj_bias.values()[a];
                    for (std::size_t i = 0; i < c; ++i) {
                        o[a] += w.proj_weight.values()[a * c + i] * v[i];
                    }
                }
                return o;
            }();
            for (std::size_t t = 0; t < 9; ++t) {
                for (std::size_t e = 0; e < c; ++e) {
                    CHECK(out[(n * 9 + t) * c + e] == doctest::Approx(ref[e]).epsilon(1e-10));
                }
            }
        }
    }

    SUBCASE("mask open only on the diagonal returns each token's own value") {
        const Tensor windows = random_tensor({3, 9, c}, rng, 1.0, false);
        auto mask = std::make_shared<std::vector<double>>(3 * 81, -std::numeric_limits<double>::infinity());
        for (std::size_t n = 0; n < 3; ++n) {
            for (std::size_t i = 0; i < 9; ++i) {
                (*mask)[n * 81 + i * 9 + i] = 0.0;
            }
        }
        const Tensor out = window_attention(windows, weights, 2, 3, 3, mask);
        for (std::size_t t = 0; t < 27; ++t) {
            const auto expected = value_projection(windows.values().subspan(t * c, c));
            for (std::size_t e = 0; e < c; ++e) {
                CHECK(out[t * c + e] == doctest::Approx(expected[e]).epsilon(1e-12));
            }
        }
    }

    SUBCASE("head count must divide the channels") {
        const Tensor windows = random_tensor({1, 9, c}, rng, 1.0, false);
        CHECK_THROWS_AS(window_attention(windows, weights, 3, 3, 3, nullptr), ConfigError);
    }
}

TEST_CASE("attention rows are distributions") {
    Rng rng(3);
    ParamStore p;
    add_block(p, "b.", 8, 2, 4, rng);
    const TokenGrid grid{random_tensor({8, 8, 8}, rng, 1.0, false), 0};
    for (bool shifted : {false, true}) {
        std::vector<double> probs;
        swin_block(grid, p, "b.", 2, 4, shifted, &probs);
        REQUIRE(probs.size() == 4 * 2 * 16 * 16);
        for (std::size_t row = 0; row < probs.size() / 16; ++row) {
            double s = 0.0;
            for (std::size_t j = 0; j < 16; ++j) {
                CHECK(probs[row * 16 + j] >= 0.0);
                s += probs[row * 16 + j];
            }
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("attention is equivariant to token permutations within a window") {
    Rng rng(4);
    const std::size_t heads = 2;
    const std::size_t t = 6;
    const std::size_t d = 3;
    const Tensor q = random_tensor({heads, t, d}, rng, 1.0, false);
    const Tensor k = random_tensor({heads, t, d}, rng, 1.0, false);
    const Tensor v = random_tensor({heads, t, d}, rng, 1.0, false);
    const Tensor bias = random_tensor({heads, t, t}, rng, 1.0, false);
    auto mask = std::make_shared<std::vector<double>>(t * t, 0.0);
    (*mask)[1] = (*mask)[2 * t + 4] = -std::numeric_limits<double>::infinity();

    const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    auto permute_rows = [&](const Tensor& x) {
        std::vector<double> out(x.size());
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < t; ++i) {
                for (std::size_t e = 0; e < d; ++e) {
                    out[(h * t + i) * d + e] = x[(h * t + perm[i]) * d + e];
                }
            }
        }
        return Tensor(x.shape(), out);
    };
    std::vector<double> pb(bias.size());
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < t; ++i) {
            for (std::size_t j = 0; j < t; ++j) {
                pb[(h * t + i) * t + j] = bias[(h * t + perm[i]) * t + perm[j]];
            }
        }
    }
    auto pmask = std::make_shared<std::vector<double>>(t * t);
    for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < t; ++j) {
            (*pmask)[i * t + j] = (*mask)[perm[i] * t + perm[j]];
        }
    }
    const double scale = 1.0 / std::sqrt(3.0);
    const Tensor out = ops::window_attention_core(q, k, v, bias, mask, heads, scale);
    const Tensor pout = ops::window_attention_core(permute_rows(q), permute_rows(k), permute_rows(v),
                                                   Tensor(bias.shape(), pb), pmask, heads, scale);
    const Tensor expected = permute_rows(out);
    CHECK(max_abs_diff(pout.values(), expected.values()) < 1e-14);
}

TEST_CASE("block with zeroed output projections is the identity") {
    Rng rng(5);
    ParamStore p;
    add_block(p, "b.", 8, 2, 4, rng);
    for (const char* name : {"b.attn.proj.weight", "b.attn.proj.bias", "b.mlp.fc2.weight", "b.mlp.fc2.bias"}) {
        auto v = p.at(name).mutable_values();
        std::fill(v.begin(), v.end(), 0.0);
    }
    const TokenGrid grid{random_tensor({8, 8, 8}, rng, 1.0, false), 0};
    for (bool shifted : {false, true}) {
        const TokenGrid out = swin_block(grid, p, "b.", 2, 4, shifted);
        CHECK(out.tokens.shape() == grid.tokens.shape());
        CHECK(std::equal(out.tokens.values().begin(), out.tokens.values().end(), grid.tokens.values().begin()));
    }
}

TEST_CASE("cyclic-shift block equals the explicit regrouping oracle") {
    Rng rng(6);
    struct Case {
        std::size_t h, w, c, heads, window;
    };
    for (const Case& cs : {Case{8, 8, 8, 2, 4}, Case{12, 12, 6, 3, 4}, Case{14, 14, 4, 1, 7}, Case{6, 6, 4, 2, 4},
                           Case{10, 7, 4, 2, 3}, Case{9, 12, 6, 2, 4}}) {
        for (bool shifted : {false, true}) {
            ParamStore p;
            add_block(p, "b.", cs.c, cs.heads, cs.window, rng);
            const TokenGrid grid{random_tensor({cs.h, cs.w, cs.c}, rng, 1.0, false), 0};
            const TokenGrid out = swin_block(grid, p, "b.", cs.heads, cs.window, shifted);
            const OracleGrid ref = oracle_swin_block(to_oracle(grid.tokens), p, "b.", cs.heads, cs.window, shifted);
            INFO("grid " << cs.h << "x" << cs.w << " window " << cs.window << " shifted " << shifted);
            CHECK(max_abs_diff(out.tokens.values(), ref.values) < 1e-10);
        }
    }
}

TEST_CASE("shifted and unshifted blocks differ") {
    Rng rng(7);
    ParamStore p;
    add_block(p, "b.", 8, 2, 4, rng);
    const TokenGrid grid{random_tensor({8, 8, 8}, rng, 1.0, false), 0};
    CHECK(max_abs_diff(swin_block(grid, p, "b.", 2, 4, false).tokens.values(),
                       swin_block(grid, p, "b.", 2, 4, true).tokens.values()) > 1e-3);
}

TEST_CASE("patch merging") {
    Rng rng(8);
    const std::size_t c = 3;
    ParamStore p;
    p.add("m.norm.weight", init::constant({4 * c}, 1.0));
    p.add("m.norm.bias", init::zeros({4 * c}));
    p.add("m.reduction.weight", identity_weight(2 * c, 4 * c));

    SUBCASE("shapes") {
        CHECK(patch_merge({random_tensor({56, 56, c}, rng, 1.0, false), 0}, p, "m.").tokens.shape() ==
              Shape{28, 28, 2 * c});
        const TokenGrid one = patch_merge({random_tensor({2, 2, c}, rng, 1.0, false), 1}, p, "m.");
        CHECK(one.tokens.shape() == Shape{1, 1, 2 * c});
        CHECK(one.stage == 2);
    }
    SUBCASE("constant grid gives constant output") {
        std::vector<double> v(6 * 4 * c);
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = static_cast<double>(i % c) * 0.7 - 1.0;
        }
        const TokenGrid out = patch_merge({Tensor({6, 4, c}, v), 0}, p, "m.");
        for (std::size_t i = 0; i < out.tokens.size(); ++i) {
            CHECK(out.tokens[i] == doctest::Approx(out.tokens[i % (2 * c)]).epsilon(1e-14));
        }
    }
    SUBCASE("neighbourhood order and odd-extent replication") {
        // without normalization the identity projection exposes the raw concatenation
        ParamStore raw;
        raw.add("m.norm.weight", init::constant({4}, 1.0));
        raw.add("m.norm.bias", init::zeros({4}));
        raw.add("m.reduction.weight", identity_weight(2, 4));
        std::vector<double> v(3 * 3);
        std::iota(v.begin(), v.end(), 0.0);
        const TokenGrid out = patch_merge({Tensor({3, 3, 1}, v), 0}, raw, "m.");
        CHECK(out.tokens.shape() == Shape{2, 2, 2});
        // token (0,0) concatenates (0,0),(1,0),(0,1),(1,1) = 0,3,1,4 -> LN over [0,3,1,4]
        const double mean = 2.0;
        const double sd = std::sqrt((4.0 + 1.0 + 1.0 + 4.0) / 4.0 + 1e-5);
        CHECK(out.tokens[0] == doctest::Approx((0.0 - mean) / sd));
        CHECK(out.tokens[1] == doctest::Approx((3.0 - mean) / sd));
        // token (1,1) replicates the last row and column: 8,8,8,8 -> all zero after LN
        CHECK(out.tokens[6] == doctest::Approx(0.0));
        CHECK(out.tokens[7] == doctest::Approx(0.0));
    }
}

TEST_CASE("patch embedding") {
    Rng rng(9);
    SwinConfig cfg;
    ParamStore p;
    init_swin(p, cfg, rng);
    SUBCASE("224x224x3 gives a 56x56 grid from 48-dim patches") {
        CHECK(p.at("swin.patch_embed.proj.weight").shape() == Shape{96, 48});
        const TokenGrid g = patch_embed(random_tensor({3, 224, 224}, rng, 1.0, false), cfg, p);
        CHECK(g.tokens.shape() == Shape{56, 56, 96});
    }
    SUBCASE("64x64 gives a 16x16 grid") {
        const TokenGrid g = patch_embed(random_tensor({3, 64, 64}, rng, 1.0, false), cfg, p);
        CHECK(g.tokens.shape() == Shape{16, 16, 96});
    }
    SUBCASE("indivisible extent is rejected") {
        CHECK_THROWS_AS(patch_embed(random_tensor({3, 66, 64}, rng, 1.0, false), cfg, p), ValidationError);
    }
    SUBCASE("constant image gives a constant token grid") {
        SwinConfig small = SwinConfig::tiny();
        ParamStore q;
        init_swin(q, small, rng);
        auto w = q.at("swin.patch_embed.proj.weight");
        const Tensor id = identity_weight(small.embed_dim, small.patch_dim());
        std::copy(id.values().begin(), id.values().end(), w.mutable_values().begin());
        const TokenGrid g = patch_embed(Tensor({3, 16, 16}, 0.8), small, q);
        for (std::size_t i = 0; i < g.tokens.size(); ++i) {
            CHECK(g.tokens[i] == g.tokens[i % small.embed_dim]);
        }
    }
    SUBCASE("patch vectors are ordered channel, row, column") {
        SwinConfig small = SwinConfig::tiny();
        small.embed_dim = small.patch_dim();
        small.heads = {1, 1, 1, 1};
        ParamStore q;
        init_swin(q, small, rng);
        auto w = q.at("swin.patch_embed.proj.weight");
        const Tensor id = identity_weight(small.embed_dim, small.patch_dim());
        std::copy(id.values().begin(), id.values().end(), w.mutable_values().begin());
        std::vector<double> img(3 * 8 * 8);
        std::iota(img.begin(), img.end(), 0.0);
        // drop the normalization by checking ranks of the normalized values instead
        const TokenGrid g = patch_embed(Tensor({3, 8, 8}, img), small, q);
        // token (0,1): channel 0 rows 0..3, columns 4..7 come first and increase
        const auto tok = g.tokens.values().subspan(small.embed_dim, small.embed_dim);
        CHECK(std::is_sorted(tok.begin(), tok.end()));
    }
}

TEST_CASE("encoder pyramid shapes") {
    Rng rng(10);
    SUBCASE("tiny config on 64x64") {
        const SwinConfig cfg = SwinConfig::tiny();
        ParamStore p;
        init_swin(p, cfg, rng);
        const FeaturePyramid pyr = encode(random_tensor({64, 64}, rng, 1.0, false), cfg, p);
        REQUIRE(pyr.levels.size() == 4);
        CHECK(pyr.levels[0].tokens.shape() == Shape{16, 16, 8});
        CHECK(pyr.levels[1].tokens.shape() == Shape{8, 8, 16});
        CHECK(pyr.levels[2].tokens.shape() == Shape{4, 4, 32});
        CHECK(pyr.levels[3].tokens.shape() == Shape{2, 2, 64});
    }
    SUBCASE("default config on 224x224") {
        const SwinConfig cfg;
        ParamStore p;
        init_swin(p, cfg, rng);
        NoGradGuard guard;
        const FeaturePyramid pyr = encode(random_tensor({224, 224}, rng, 1.0, false), cfg, p);
        REQUIRE(pyr.levels.size() == 4);
        CHECK(pyr.levels[0].tokens.shape() == Shape{56, 56, 96});
        CHECK(pyr.levels[1].tokens.shape() == Shape{28, 28, 192});
        CHECK(pyr.levels[2].tokens.shape() == Shape{14, 14, 384});
        CHECK(pyr.levels[3].tokens.shape() == Shape{7, 7, 768});
    }
    SUBCASE("indivisible input is rejected") {
        const SwinConfig cfg = SwinConfig::tiny();
        ParamStore p;
        init_swin(p, cfg, rng);
        CHECK_THROWS_AS(encode(random_tensor({62, 64}, rng, 1.0, false), cfg, p), ValidationError);
    }
}

TEST_CASE("encoder is deterministic") {
    const SwinConfig cfg = SwinConfig::tiny();
    Rng a(11);
    Rng b(11);
    ParamStore pa;
    ParamStore pb;
    init_swin(pa, cfg, a);
    init_swin(pb, cfg, b);
    Rng rng(12);
    const Tensor slice = random_tensor({64, 64}, rng, 1.0, false);
    const auto x = encode(slice, cfg, pa);
    const auto y = encode(slice, cfg, pb);
    for (std::size_t l = 0; l < 4; ++l) {
        CHECK(std::equal(x.levels[l].tokens.values().begin(), x.levels[l].tokens.values().end(),
                         y.levels[l].tokens.values().begin()));
    }
}

TEST_CASE("layout conversions are inverse") {
    Rng rng(13);
    const Tensor t = random_tensor({3, 5, 7}, rng, 1.0, false);
    const Tensor m = tokens_to_map(t);
    CHECK(m.shape() == Shape{7, 3, 5});
    CHECK(m[1 * 15 + 2 * 5 + 4] == t[(2 * 5 + 4) * 7 + 1]);
    const Tensor back = map_to_tokens(m);
    CHECK(std::equal(back.values().begin(), back.values().end(), t.values().begin()));
}

TEST_CASE("encoder gradients match central differences") {
    const SwinConfig cfg = SwinConfig::tiny();
    Rng rng(14);
    ParamStore p;
    init_swin(p, cfg, rng);
    randomize(p, rng);
    const Tensor slice = random_tensor({64, 64}, rng, 1.0, false);
    std::vector<Tensor> probes;
    {
        NoGradGuard guard;
        for (const auto& level : encode(slice, cfg, p).levels) {
            probes.push_back(random_tensor(level.tokens.shape(), rng, 1.0, false));
        }
    }
    auto loss_tensor = [&] {
        const auto pyr = encode(slice, cfg, p);
        std::vector<Tensor> terms;
        for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
            terms.push_back(ops::mean(ops::mul(pyr.levels[l].tokens, probes[l])));
        }
        return ops::mean_of(terms);
    };
    p.zero_grad();
    loss_tensor().backward();
    std::vector<Tensor> params;
    for (auto& [_, t] : p) {
        params.push_back(t);
    }
    const auto summary = check_all(
        params,
        [&] {
            NoGradGuard guard;
            return loss_tensor().item();
        },
        1e-5, 3);
    CHECK(summary.checked >= 100);
    CHECK(summary.max_relative_error < 1e-4);
    MESSAGE("checked " << summary.checked << " parameters, max relative error " << summary.max_relative_error);
}

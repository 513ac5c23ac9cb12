#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gradcheck.hpp"
#include "swintempo/errors.hpp"
#include "swintempo/model.hpp"
#include "swintempo/ops.hpp"
#include "swintempo/unet_fusion.hpp"

using namespace swintempo;
using namespace swintempo::testing;

namespace {

struct Fixture {
    UNetConfig unet;
    SwinConfig swin = SwinConfig::tiny();
    ParamStore params;

    explicit Fixture(std::uint64_t seed, std::size_t base = 4) {
        unet.base_channels = base;
        Rng rng(seed);
        init_unet(params, unet, swin, rng);
        init_swin(params, swin, rng);
    }
};

void fill(ParamStore& params, const std::string& prefix, double value) {
    for (auto& [name, t] : params) {
        if (name.starts_with(prefix)) {
            auto v = t.mutable_values();
            std::fill(v.begin(), v.end(), value);
        }
    }
}

bool all_zero(const Tensor& t) {
    return std::all_of(t.values().begin(), t.values().end(), [](double v) { return v == 0.0; });
}

bool same(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::equal(a.values().begin(), a.values().end(), b.values().begin());
}

}  // namespace

TEST_CASE("config validation") {
    UNetConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.n_down = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = UNetConfig{};
    cfg.base_channels = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("contracting path scales") {
    Rng rng(1);
    SUBCASE("64x64 tiny config") {
        Fixture f(2);
        const auto pyr = contract(random_tensor({64, 64}, rng, 1.0, false), f.unet, f.params);
        REQUIRE(pyr.levels.size() == 6);
        for (std::size_t l = 0; l < 6; ++l) {
            CHECK(pyr.levels[l].shape() == Shape{4UL << l, 64UL >> l, 64UL >> l});
        }
    }
    SUBCASE("224x224") {
        Fixture f(3, 2);
        NoGradGuard guard;
        const auto pyr = contract(random_tensor({224, 224}, rng, 1.0, false), f.unet, f.params);
        const std::size_t extents[] = {224, 112, 56, 28, 14, 7};
        for (std::size_t l = 0; l < 6; ++l) {
            CHECK(pyr.levels[l].dim(1) == extents[l]);
            CHECK(pyr.levels[l].dim(2) == extents[l]);
        }
    }
    SUBCASE("zero weights and biases give zero features") {
        Fixture f(4);
        fill(f.params, "unet.", 0.0);
        const auto pyr = contract(Tensor({64, 64}, 0.7), f.unet, f.params);
        for (const auto& level : pyr.levels) {
            CHECK(all_zero(level));
        }
    }
    SUBCASE("indivisible input is rejected") {
        Fixture f(5);
        CHECK_THROWS_AS(contract(random_tensor({48, 64}, rng, 1.0, false), f.unet, f.params), ValidationError);
    }
    SUBCASE("features are rectified") {
        Fixture f(6);
        const auto pyr = contract(random_tensor({64, 64}, rng, 1.0, false), f.unet, f.params);
        for (const auto& level : pyr.levels) {
            CHECK(std::all_of(level.values().begin(), level.values().end(), [](double v) { return v >= 0.0; }));
        }
    }
}

TEST_CASE("fusion") {
    Rng rng(7);
    Fixture f(8);
    const Tensor slice = random_tensor({64, 64}, rng, 1.0, false);
    const auto unet = contract(slice, f.unet, f.params);
    const auto swin = encode(slice, f.swin, f.params);

    SUBCASE("fused levels take the encoder shapes") {
        const auto fused = fuse(unet, &swin, f.params);
        REQUIRE(fused.levels.size() == 4);
        for (std::size_t k = 0; k < 4; ++k) {
            const auto& t = swin.levels[k].tokens;
            CHECK(fused.levels[k].shape() == Shape{t.dim(2), t.dim(0), t.dim(1)});
        }
        CHECK(same(fused.skip_full, unet.levels[0]));
        CHECK(same(fused.skip_half, unet.levels[1]));
    }
    SUBCASE("zero encoder pyramid leaves the projected UNet level") {
        FeaturePyramid zero = swin;
        for (auto& level : zero.levels) {
            level.tokens = Tensor(level.tokens.shape(), 0.0);
        }
        const auto with_zero = fuse(unet, &zero, f.params);
        const auto projected = fuse(unet, nullptr, f.params);
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(same(with_zero.levels[k], projected.levels[k]));
        }
    }
    SUBCASE("zero UNet pyramid with identity-like projection leaves the encoder level") {
        UNetPyramid zero = unet;
        for (auto& level : zero.levels) {
            level = Tensor(level.shape(), 0.0);
        }
        const auto fused = fuse(zero, &swin, f.params);
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(same(fused.levels[k], tokens_to_map(swin.levels[k].tokens)));
        }
    }
    SUBCASE("summation order does not matter") {
        const auto fused = fuse(unet, &swin, f.params);
        const auto projected = fuse(unet, nullptr, f.params);
        for (std::size_t k = 0; k < 4; ++k) {
            const Tensor swapped = ops::add(tokens_to_map(swin.levels[k].tokens), projected.levels[k]);
            CHECK(same(fused.levels[k], swapped));
        }
    }
    SUBCASE("spatial mismatch is rejected") {
        Fixture g(9);
        const auto other = encode(random_tensor({32, 32}, rng, 1.0, false), g.swin, g.params);
        CHECK_THROWS_AS(fuse(unet, &other, f.params), ValidationError);
    }
}

TEST_CASE("expanding path") {
    Rng rng(10);
    SUBCASE("output matches the slice extent") {
        Fixture f(11);
        const Tensor slice = random_tensor({64, 64}, rng, 1.0, false);
        const auto swin = encode(slice, f.swin, f.params);
        const auto fused = fuse(contract(slice, f.unet, f.params), &swin, f.params);
        CHECK(expand(fused, fused.levels.back(), f.params).shape() == Shape{64, 64});
    }
    SUBCASE("224 input") {
        ModelConfig cfg;
        cfg.unet.base_channels = 2;
        cfg.swin.embed_dim = 12;
        cfg.swin.depths = {1, 1, 1, 1};
        cfg.variant = Variant::SwinEnhanced;
        Model model(cfg, 3);
        NoGradGuard guard;
        const auto out = model.forward(random_tensor({224, 224}, rng, 1.0, false), model.initial_state(), 0);
        CHECK(out.logits.shape() == Shape{224, 224});
    }
    SUBCASE("all-zero parameters give all-zero logits") {
        Fixture f(12);
        fill(f.params, "", 0.0);
        const Tensor slice = random_tensor({64, 64}, rng, 1.0, false);
        const auto fused = fuse(contract(slice, f.unet, f.params), nullptr, f.params);
        CHECK(all_zero(expand(fused, fused.levels.back(), f.params)));
    }
    SUBCASE("misaligned bottleneck is rejected") {
        Fixture f(13);
        const Tensor slice = random_tensor({64, 64}, rng, 1.0, false);
        const auto fused = fuse(contract(slice, f.unet, f.params), nullptr, f.params);
        CHECK_THROWS_AS(expand(fused, Tensor({64, 4, 4}, 0.0), f.params), ValidationError);
    }
}

TEST_CASE("decoder gradients match central differences") {
    Rng rng(14);
    Fixture f(15);
    const Tensor slice = random_tensor({64, 64}, rng, 1.0, false);
    FusedPyramid fused;
    {
        NoGradGuard guard;
        const auto swin = encode(slice, f.swin, f.params);
        fused = fuse(contract(slice, f.unet, f.params), &swin, f.params);
    }
    auto loss = [&] { return ops::mean(expand(fused, fused.levels.back(), f.params)); };
    f.params.zero_grad();
    loss().backward();
    std::vector<std::pair<std::string, Tensor>> decoder;
    for (auto& [name, t] : f.params) {
        if (name.starts_with("dec.")) {
            decoder.emplace_back(name, t);
        }
    }
    const auto summary = sampled_gradient_check(
        decoder,
        [&] {
            NoGradGuard guard;
            return loss().item();
        },
        rng, 120, 1e-4);
    CHECK(summary.checked >= 100);
    CHECK(summary.max_relative_error < 1e-4);
    MESSAGE("checked " << summary.checked << " (" << summary.crossed_kinks << " redrawn at kinks), max relative error "
                        << summary.max_relative_error << " at " << summary.worst);
}

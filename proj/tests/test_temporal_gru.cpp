#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gradcheck.hpp"
#include "swintempo/errors.hpp"
#include "swintempo/model.hpp"
#include "swintempo/ops.hpp"
#include "swintempo/temporal_gru.hpp"

#include <cmath>

using namespace swintempo;
using namespace swintempo::testing;

namespace {

constexpr std::size_t kChannels = 3;

ParamStore gru_params(std::uint64_t seed) {
    ParamStore p;
    Rng rng(seed);
    init_gru(p, kChannels, kChannels, rng);
    for (const char* gate : {"gru.conv_z.bias", "gru.conv_r.bias", "gru.conv_h.bias"}) {
        for (auto& v : p.at(gate).mutable_values()) {
            v = rng.normal();
        }
    }
    return p;
}

void set_bias(ParamStore& p, const std::string& name, double value) {
    auto v = p.at(name).mutable_values();
    std::fill(v.begin(), v.end(), value);
}

CTVolume random_volume(std::size_t slices, std::size_t h, std::size_t w, std::uint64_t seed) {
    Rng rng(seed);
    CTVolume v;
    v.series_id = "vol" + std::to_string(seed);
    v.shape = {slices, h, w};
    v.spacing_mm = {2.0, 1.0, 1.0};
    v.origin_mm = {0.0, 0.0, 0.0};
    v.preprocessed = true;
    v.voxels.resize(slices * h * w);
    for (auto& x : v.voxels) {
        x = static_cast<float>(rng.normal());
    }
    return v;
}

bool identical(const std::vector<ProbabilityMap>& a, const std::vector<ProbabilityMap>& b, std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
        if (a[i].values.values != b[i].values.values) {
            return false;
        }
    }
    return true;
}

// Gate-stressed tiny model: larger recurrent weights so the state visibly matters.
Model temporal_model(std::uint64_t seed) {
    Model m(ModelConfig::tiny(Variant::SwinTempo), seed);
    Rng rng(seed + 100);
    for (auto& [name, t] : m.params()) {
        if (name.starts_with("gru.") && name.ends_with(".weight")) {
            for (auto& v : t.mutable_values()) {
                v = 0.2 * rng.normal();
            }
        }
    }
    return m;
}

}  // namespace

TEST_CASE("hidden state initialization") {
    const HiddenState a = init_hidden(4, 2, 3);
    const HiddenState b = init_hidden(4, 2, 3);
    CHECK(a.state.shape() == Shape{4, 2, 3});
    CHECK(a.slice_index_last == -1);
    CHECK(std::all_of(a.state.values().begin(), a.state.values().end(), [](double v) { return v == 0.0; }));
    CHECK(std::equal(a.state.values().begin(), a.state.values().end(), b.state.values().begin()));

    const Model tiny(ModelConfig::tiny(), 1);
    CHECK(tiny.initial_state().state.shape() == Shape{64, 2, 2});
    ModelConfig big;
    big.unet.base_channels = 2;
    CHECK(big.bottleneck_channels() == 768);
    CHECK(big.bottleneck_extent() == 7);
}

TEST_CASE("gate algebra") {
    Rng rng(2);
    ParamStore p = gru_params(3);
    const Tensor x = random_tensor({kChannels, 4, 4}, rng, 1.0, false);
    HiddenState h{Tensor({kChannels, 4, 4}, std::vector<double>(48)), 0};
    for (auto& v : h.state.mutable_values()) {
        v = std::tanh(rng.normal());
    }

    SUBCASE("z saturated at 0 freezes the state") {
        set_bias(p, "gru.conv_z.bias", -1000.0);
        const HiddenState next = gru_step(x, h, p, 1);
        CHECK(std::equal(next.state.values().begin(), next.state.values().end(), h.state.values().begin()));
        CHECK(next.slice_index_last == 1);
    }
    SUBCASE("z saturated at 1 makes the step memoryless") {
        set_bias(p, "gru.conv_z.bias", 1000.0);
        GruGates gates;
        const HiddenState next = gru_step(x, h, p, 1, "gru.", &gates);
        for (std::size_t i = 0; i < next.state.size(); ++i) {
            CHECK(next.state[i] == doctest::Approx(gates.candidate[i]).epsilon(1e-15));
        }
    }
    SUBCASE("zero input and state reduce to the bias formula") {
        const HiddenState zero = init_hidden(kChannels, 4, 4);
        const HiddenState next = gru_step(Tensor({kChannels, 4, 4}, 0.0), zero, p, 0);
        const auto bz = p.at("gru.conv_z.bias").values();
        const auto bh = p.at("gru.conv_h.bias").values();
        for (std::size_t c = 0; c < kChannels; ++c) {
            const double expected = 1.0 / (1.0 + std::exp(-bz[c])) * std::tanh(bh[c]);
            for (std::size_t i = 0; i < 16; ++i) {
                CHECK(next.state[c * 16 + i] == doctest::Approx(expected).epsilon(1e-14));
            }
        }
    }
    SUBCASE("gates are open intervals and the update is a convex combination") {
        GruGates gates;
        HiddenState state = h;
        for (long k = 1; k < 6; ++k) {
            const HiddenState next = gru_step(random_tensor({kChannels, 4, 4}, rng, 2.0, false), state, p, k, "gru.",
                                              &gates);
            for (std::size_t i = 0; i < next.state.size(); ++i) {
                CHECK(gates.update[i] > 0.0);
                CHECK(gates.update[i] < 1.0);
                CHECK(gates.reset[i] > 0.0);
                CHECK(gates.reset[i] < 1.0);
                const double lo = std::min(state.state[i], gates.candidate[i]);
                const double hi = std::max(state.state[i], gates.candidate[i]);
                CHECK(next.state[i] >= lo - 1e-15);
                CHECK(next.state[i] <= hi + 1e-15);
                CHECK(std::abs(next.state[i]) <= std::max(std::abs(state.state[i]), 1.0));
            }
            state = next;
        }
    }
    SUBCASE("errors") {
        CHECK_THROWS_AS(gru_step(random_tensor({kChannels, 2, 4}, rng, 1.0, false), h, p, 1), ValidationError);
        CHECK_THROWS_AS(gru_step(x, h, p, 0), ValidationError);
        CHECK_THROWS_AS(gru_step(x, h, p, -3), ValidationError);
    }
}

TEST_CASE("volume processing") {
    const Model model = temporal_model(4);

    SUBCASE("single slice equals the non-temporal forward from a zero state") {
        const CTVolume vol = random_volume(1, 64, 64, 5);
        const auto maps = model.process_volume(vol);
        REQUIRE(maps.size() == 1);
        NoGradGuard guard;
        std::vector<double> slice(vol.voxels.begin(), vol.voxels.end());
        const auto out = model.forward(Tensor({64, 64}, slice), model.initial_state(), 0);
        const Tensor prob = ops::sigmoid(out.logits);
        CHECK(std::equal(prob.values().begin(), prob.values().end(), maps[0].values.values.begin()));
    }
    SUBCASE("outputs are probabilities at the slice extent, in ascending z") {
        const CTVolume vol = random_volume(3, 48, 80, 6);
        const auto maps = model.process_volume(vol);
        REQUIRE(maps.size() == 3);
        for (std::size_t z = 0; z < 3; ++z) {
            CHECK(maps[z].slice_index == static_cast<long>(z));
            CHECK(maps[z].series_id == vol.series_id);
            CHECK(maps[z].values.height == 48);
            CHECK(maps[z].values.width == 80);
            for (double v : maps[z].values.values) {
                CHECK(v > 0.0);
                CHECK(v < 1.0);
            }
        }
    }
    SUBCASE("causality: a later slice never changes earlier outputs") {
        const CTVolume vol = random_volume(5, 64, 64, 7);
        const auto base = model.process_volume(vol);
        for (std::size_t k = 0; k + 1 < 5; ++k) {
            CTVolume perturbed = vol;
            for (std::size_t i = 0; i < 64 * 64; ++i) {
                perturbed.voxels[(k + 1) * 64 * 64 + i] += 0.5F;
            }
            const auto out = model.process_volume(perturbed);
            CHECK(identical(base, out, k + 1));
            CHECK_FALSE(identical(base, out, k + 2));
        }
    }
    SUBCASE("reversing the slice order changes outputs") {
        const CTVolume vol = random_volume(4, 64, 64, 8);
        CTVolume reversed = vol;
        for (std::size_t z = 0; z < 4; ++z) {
            std::copy_n(vol.voxels.begin() + (3 - z) * 4096, 4096, reversed.voxels.begin() + z * 4096);
        }
        const auto forward = model.process_volume(vol);
        const auto backward = model.process_volume(reversed);
        // the last reversed slice is the first forward slice seen after three others
        CHECK(forward[0].values.values != backward[3].values.values);
    }
    SUBCASE("state resets between volumes") {
        const CTVolume vol = random_volume(3, 64, 64, 9);
        const auto first = model.process_volume(vol);
        const auto second = model.process_volume(vol);
        CHECK(identical(first, second, 3));
    }
    SUBCASE("unprocessed volumes are rejected") {
        CTVolume vol = random_volume(1, 64, 64, 10);
        vol.preprocessed = false;
        CHECK_THROWS_AS(model.process_volume(vol), ValidationError);
    }
    SUBCASE("the recurrent variant is the only one that depends on earlier slices") {
        const Model enhanced(ModelConfig::tiny(Variant::SwinEnhanced), 4);
        const CTVolume vol = random_volume(3, 64, 64, 11);
        CTVolume perturbed = vol;
        perturbed.voxels[10] += 1.0F;
        const auto a = enhanced.process_volume(vol);
        const auto b = enhanced.process_volume(perturbed);
        CHECK(a[1].values.values == b[1].values.values);
        CHECK(a[2].values.values == b[2].values.values);
    }
}

TEST_CASE("gradients through a three-slice unrolled sequence") {
    Model model = temporal_model(12);
    Rng rng(13);
    std::vector<Tensor> slices;
    std::vector<std::shared_ptr<const std::vector<double>>> targets;
    for (int k = 0; k < 3; ++k) {
        slices.push_back(random_tensor({64, 64}, rng, 1.0, false));
        auto target = std::make_shared<std::vector<double>>(64 * 64, 0.0);
        for (std::size_t y = 20; y < 28; ++y) {
            for (std::size_t x = 30; x < 38; ++x) {
                (*target)[y * 64 + x] = 1.0;
            }
        }
        targets.push_back(target);
    }
    auto loss = [&] {
        HiddenState state = model.initial_state();
        std::vector<Tensor> terms;
        for (long k = 0; k < 3; ++k) {
            SliceResult r = model.forward(slices[k], state, k);
            terms.push_back(ops::bce_with_logits(r.logits, targets[k]));
            state = r.state;
        }
        return ops::mean_of(terms);
    };
    model.params().zero_grad();
    loss().backward();
    std::vector<std::pair<std::string, Tensor>> gru;
    for (auto& [name, t] : model.params()) {
        if (name.starts_with("gru.")) {
            gru.emplace_back(name, t);
        }
    }
    const auto summary = sampled_gradient_check(
        gru,
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

TEST_CASE("ablation variants differ structurally") {
    Rng rng(14);
    const Tensor slice = random_tensor({64, 64}, rng, 1.0, false);
    struct Expect {
        Variant variant;
        bool swin;
        bool gru;
        std::vector<std::string> stages;
    };
    const std::vector<Expect> expectations{
        {Variant::BaselineUnet, false, false, {"unet.contract", "fuse", "dec.expand"}},
        {Variant::SwinEnhanced, true, false, {"unet.contract", "swin.encode", "fuse", "dec.expand"}},
        {Variant::SwinTempo, true, true, {"unet.contract", "swin.encode", "fuse", "gru.step", "dec.expand"}},
    };
    for (const auto& e : expectations) {
        Model model(ModelConfig::tiny(e.variant), 15);
        CHECK(model.params().has_prefix("swin.") == e.swin);
        CHECK(model.params().has_prefix("gru.") == e.gru);
        CHECK(model.params().has_prefix("unet."));
        CHECK(model.params().has_prefix("fuse."));
        CHECK(model.params().has_prefix("dec."));

        ForwardTrace trace;
        model.params().zero_grad();
        const auto out = model.forward(slice, model.initial_state(), 0, &trace);
        CHECK(trace.stages == e.stages);
        ops::mean(out.logits).backward();
        // every registered parameter is reached by the graph
        for (const auto& [name, t] : model.params()) {
            INFO(name);
            CHECK(t.has_grad());
        }
    }
    // shared parameters start from identical values across variants
    const Model a(ModelConfig::tiny(Variant::BaselineUnet), 16);
    const Model b(ModelConfig::tiny(Variant::SwinTempo), 16);
    for (const auto& [name, t] : a.params()) {
        CHECK(std::equal(t.values().begin(), t.values().end(), b.params().at(name).values().begin()));
    }
}

TEST_CASE("model config round trip") {
    ModelConfig cfg = ModelConfig::tiny(Variant::SwinEnhanced);
    const ModelConfig back = ModelConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.variant == Variant::SwinEnhanced);
    CHECK_THROWS_AS(parse_variant("resnet"), ConfigError);
    cfg.image_size = 48;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

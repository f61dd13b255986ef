#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "qmri/dictionary.hpp"
#include "qmri/errors.hpp"
#include "qmri/flash.hpp"
#include "qmri/rng.hpp"
#include "test_helpers.hpp"

using namespace qmri;

namespace {

Protocol twelve_contrast_protocol() {
    Protocol p;
    for (double fa : {10.0, 20.0, 30.0}) {
        for (double te : {5.0, 11.0, 18.0, 25.0}) {
            p.entries.push_back({37.0, te, fa});
        }
    }
    return p;
}

}  // namespace

TEST_CASE("log grid endpoints and monotonicity") {
    const auto g = log_grid(5.0, 200.0, 128);
    REQUIRE(g.size() == 128);
    CHECK(g.front() == 5.0);
    CHECK(g.back() == 200.0);
    for (std::size_t i = 1; i < g.size(); ++i) {
        CHECK(g[i] > g[i - 1]);
        // Log spacing: the ratio between neighbors is constant.
        if (i >= 2) CHECK(g[i] / g[i - 1] == doctest::Approx(g[1] / g[0]).epsilon(1e-9));
    }
    CHECK(log_grid(10.0, 20.0, 1) == std::vector<double>{10.0});
    CHECK_THROWS_AS(log_grid(-1.0, 5.0, 4), ConfigError);
    CHECK_THROWS_AS(log_grid(5.0, 5.0, 4), ConfigError);

    CHECK(default_t1_grid().size() == 128);
    CHECK(default_t1_grid().front() == 200.0);
    CHECK(default_t1_grid().back() == 3000.0);
    CHECK(default_t2s_grid().front() == 5.0);
    CHECK(default_t2s_grid().back() == 200.0);
}

TEST_CASE("atoms hold the unit-pd forward signal") {
    const Protocol proto = twelve_contrast_protocol();
    const Dictionary single = build_dictionary(proto, {1000.0}, {50.0});
    REQUIRE(single.atoms.size() == 1);
    for (std::size_t k = 0; k < proto.size(); ++k) {
        CHECK(single.atoms[0].signal_shape[k] ==
              flash_signal({1000.0, 50.0, 1.0}, proto[k]));
    }

    const Dictionary dict = build_dictionary(proto, log_grid(200.0, 3000.0, 100),
                                             log_grid(5.0, 200.0, 100));
    REQUIRE(dict.atoms.size() == 10000);
    RandomStream rng(51);
    for (int i = 0; i < 100; ++i) {
        const auto& atom = dict.atoms[rng.uniform_index(dict.atoms.size())];
        const std::size_t k = rng.uniform_index(proto.size());
        CHECK(atom.signal_shape[k] ==
              doctest::Approx(flash_signal({atom.t1_ms, atom.t2s_ms, 1.0}, proto[k]))
                  .epsilon(1e-15));
    }
}

TEST_CASE("entry cap guards memory") {
    const Protocol proto = twelve_contrast_protocol();
    CHECK_THROWS_AS(
        build_dictionary(proto, log_grid(200.0, 3000.0, 100), log_grid(5.0, 200.0, 100), 1000),
        ConfigError);
}

TEST_CASE("grid members are recovered exactly") {
    const Protocol proto = twelve_contrast_protocol();
    const auto t1s = default_t1_grid();
    const auto t2s = default_t2s_grid();
    const Dictionary dict = build_dictionary(proto, t1s, t2s);

    PropertyMap truth(4, 2);
    RandomStream rng(52);
    for (auto& v : truth.voxels) {
        v = {t1s[rng.uniform_index(t1s.size())], t2s[rng.uniform_index(t2s.size())], 0.8};
    }
    const FitResult fit = dictionary_fit(flash_signal_batch(truth, proto), dict);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        CHECK(fit.properties.voxels[i].t1_ms == truth.voxels[i].t1_ms);
        CHECK(fit.properties.voxels[i].t2s_ms == truth.voxels[i].t2s_ms);
        CHECK(fit.properties.voxels[i].pd == doctest::Approx(0.8).epsilon(1e-12));
        CHECK(fit.residual_norm[i] < 1e-10);
        CHECK(fit.converged[i] == 1);
    }
}

TEST_CASE("off-grid truths land within one cell") {
    const Protocol proto = twelve_contrast_protocol();
    const auto t1s = default_t1_grid();
    const auto t2s = default_t2s_grid();
    const Dictionary dict = build_dictionary(proto, t1s, t2s);

    auto cell_of = [](const std::vector<double>& grid, double value) {
        // Index of the last grid point <= value; callers pass interior values.
        std::size_t i = 0;
        while (i + 1 < grid.size() && grid[i + 1] <= value) ++i;
        return i;
    };

    RandomStream rng(53);
    PropertyMap truth(8, 4);
    for (auto& v : truth.voxels) {
        v = {rng.uniform(250.0, 2800.0), rng.uniform(6.0, 180.0), rng.uniform(0.3, 1.0)};
    }
    const FitResult fit = dictionary_fit(flash_signal_batch(truth, proto), dict);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const std::size_t t1_cell = cell_of(t1s, truth.voxels[i].t1_ms);
        const std::size_t t2_cell = cell_of(t2s, truth.voxels[i].t2s_ms);
        const std::size_t got_t1 = cell_of(t1s, fit.properties.voxels[i].t1_ms);
        const std::size_t got_t2 = cell_of(t2s, fit.properties.voxels[i].t2s_ms);
        CHECK(std::llabs(static_cast<long long>(got_t1) - static_cast<long long>(t1_cell)) <= 1);
        CHECK(std::llabs(static_cast<long long>(got_t2) - static_cast<long long>(t2_cell)) <= 1);
    }
}

TEST_CASE("selection agrees with a naive exhaustive rescan") {
    const Protocol proto = twelve_contrast_protocol();
    const Dictionary dict =
        build_dictionary(proto, log_grid(200.0, 3000.0, 24), log_grid(5.0, 200.0, 24));

    RandomStream rng(54);
    PropertyMap truth(16, 16);
    for (auto& v : truth.voxels) v = qmri::testing::random_properties(rng);
    ContrastStack stack = flash_signal_batch(truth, proto);
    RandomStream noise(55);
    stack = add_gaussian_noise(stack, 30.0, noise);

    const FitResult fit = dictionary_fit(stack, dict);

    const std::size_t n = stack.voxel_count();
    for (std::size_t v = 0; v < n; ++v) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_atom = 0;
        for (std::size_t a = 0; a < dict.atoms.size(); ++a) {
            const auto& shape = dict.atoms[a].signal_shape;
            double dot = 0.0, nn = 0.0;
            for (std::size_t k = 0; k < proto.size(); ++k) {
                dot += stack.intensities[k * n + v] * shape[k];
                nn += shape[k] * shape[k];
            }
            double pd = dot / nn;
            if (!(pd > kBackgroundPd)) pd = kBackgroundPd;
            if (pd > 1.0) pd = 1.0;
            double res = 0.0;
            for (std::size_t k = 0; k < proto.size(); ++k) {
                const double r = stack.intensities[k * n + v] - pd * shape[k];
                res += r * r;
            }
            if (res < best) {
                best = res;
                best_atom = a;
            }
        }
        REQUIRE(fit.detail[v] == best_atom);
    }
}

TEST_CASE("residual is orthogonal to the chosen atom before clamping") {
    const Protocol proto = twelve_contrast_protocol();
    const Dictionary dict =
        build_dictionary(proto, log_grid(200.0, 3000.0, 32), log_grid(5.0, 200.0, 32));

    RandomStream rng(56);
    PropertyMap truth(6, 6);
    for (auto& v : truth.voxels) {
        v = qmri::testing::random_properties(rng);
        v.pd = rng.uniform(0.2, 0.8);  // keeps the projection away from the clamp
    }
    const ContrastStack stack = flash_signal_batch(truth, proto);
    const FitResult fit = dictionary_fit(stack, dict);

    const std::size_t n = stack.voxel_count();
    for (std::size_t v = 0; v < n; ++v) {
        const auto& shape = dict.atoms[fit.detail[v]].signal_shape;
        const double pd = fit.properties.voxels[v].pd;
        double inner = 0.0;
        for (std::size_t k = 0; k < proto.size(); ++k) {
            inner += (stack.intensities[k * n + v] - pd * shape[k]) * shape[k];
        }
        CHECK(std::abs(inner) < 1e-10);
    }
}

TEST_CASE("degenerate all-zero voxels are flagged") {
    const Protocol proto = twelve_contrast_protocol();
    const Dictionary dict = build_dictionary(proto, {500.0, 1000.0}, {40.0, 80.0});
    ContrastStack zero(3, 3, proto);
    const FitResult fit = dictionary_fit(zero, dict);
    for (std::size_t v = 0; v < zero.voxel_count(); ++v) {
        CHECK(fit.converged[v] == 0);
        CHECK(fit.residual_norm[v] == 0.0);
        CHECK(fit.properties.voxels[v].pd == kBackgroundPd);
    }
}

TEST_CASE("protocol mismatches are rejected") {
    const Protocol proto = twelve_contrast_protocol();
    const Dictionary dict = build_dictionary(proto, {500.0, 1000.0}, {40.0, 80.0});

    Protocol other = proto;
    other.entries[0].te_ms += 1.0;
    ContrastStack stack(3, 3, other);
    CHECK_THROWS_AS(dictionary_fit(stack, dict), ValidationError);

    Protocol shorter{{proto.entries.begin(), proto.entries.end() - 1}};
    ContrastStack short_stack(3, 3, shorter);
    CHECK_THROWS_AS(dictionary_fit(short_stack, dict), ValidationError);
}

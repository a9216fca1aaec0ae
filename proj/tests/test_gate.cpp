#include "checks/checks.hpp"
#include "mori/experts/experts.hpp"

#include <doctest.h>

#include <cmath>

using namespace mori;

TEST_SUITE("gate") {
    TEST_CASE("gate loss components sum to the total and match a scalar reference") {
        const auto r = checks::gate_algebra(1000, 11);
        CHECK(r.batches == 1000);
        CHECK(r.worst_sum_error <= checks::kGateSumTolerance);
        CHECK(r.worst_reference_error < 1e-5);
    }

    TEST_CASE("specialization and entropy terms at the extremes") {
        const auto r = checks::gate_algebra(1, 3);
        CHECK(r.spec_at_zero == doctest::Approx(0.0));
        CHECK(r.spec_at_one == doctest::Approx(0.0));
        CHECK(r.spec_at_half == doctest::Approx(0.1 * 0.5));
        CHECK(r.spec_peaks_at_half);
        CHECK(r.entropy_at_half == doctest::Approx(-0.01 * std::log(2.0)).epsilon(1e-12));
    }

    TEST_CASE("hard selection picks bc only on a strict majority") {
        CHECK(experts::select(0.6, 0.4) == experts::Expert::bc);
        CHECK(experts::select(0.4, 0.6) == experts::Expert::rl);
        CHECK(experts::select(0.5, 0.5) == experts::Expert::rl);
        const auto d = experts::decide(1.0, 0.0, 0.2, 0.3);
        CHECK(d.w_bc == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
        CHECK(d.w_bc + d.w_rl == doctest::Approx(1.0));
        CHECK(d.selected == experts::Expert::bc);
        CHECK(d.sigma_bc == 0.2);
    }
}

#include <catch2/catch_amalgamated.hpp>

#include "grad_check.hpp"

// Every differentiable primitive, both recurrent cells, attention, and the
// full teacher-forced loss are checked against central finite differences at
// 64-bit precision: 20 random instances per operation, relative error bound
// 1e-4 (the observed worst case sits orders of magnitude below).

TEST_CASE("finite differences confirm every analytic gradient") {
    auto result = gradcheck::run_gradient_suite(20);
    REQUIRE(result.entries.size() >= 19);
    REQUIRE(result.min_instances() >= 20);
    for (const auto& e : result.entries) {
        INFO(e.op << " worst relative error " << e.worst_rel);
        CHECK(e.worst_rel < 1e-4);
    }
    REQUIRE(result.worst() < 1e-4);
}

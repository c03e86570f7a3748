#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sgrpo/grpo.hpp"
#include "sgrpo/scheduler.hpp"
#include "test_util.hpp"

using namespace sgrpo;
using namespace sgrpo::test;

TEST_CASE("scheduler formulas") {
    SUBCASE("n_verify") {
        CHECK(compute_n_verify(64, 16) == 4;
        );
    }
}

// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>

#include "rvmb/bounds_audit.hpp"

using namespace rvmb;

TEST_CASE("randomized inequality audits: no violations at moderate sample count") {
    audit_options opt;
    opt.samples = 3000;
    opt.seed = 42;
    std::vector<audit_report> reports = run_all_audits(opt);
    REQUIRE(reports.size() == 20);
    for (const audit_report& r : reports) {
        INFO(r.name);
        CHECK(r.violations == 0);
        CHECK(r.samples > 0);
        CHECK(r.rejected < opt.samples / 2);
        CHECK(std::isfinite(r.fitted_constant));
        CHECK(std::isfinite(r.worst.value));
        std::printf("%-34s samples %6lld  rejected %5lld  C=%.4e  slope %.2f -> exp %d\n",
                    r.name.c_str(), r.samples, r.rejected, r.fitted_constant, r.fitted_slope,
                    r.fitted_exponent);
    }
}

TEST_CASE("audits are deterministic in the seed") {
    audit_options opt;
    opt.samples = 1500;
    opt.seed = 7;
    std::vector<audit_report> a = run_all_audits(opt);
    std::vector<audit_report> b = run_all_audits(opt);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].name == b[k].name);
        CHECK(a[k].violations == b[k].violations);
        CHECK(a[k].rejected == b[k].rejected);
        CHECK(a[k].fitted_constant == b[k].fitted_constant);
        CHECK(a[k].worst.value == b[k].worst.value);
    }
}

TEST_CASE("each audit group runs standalone") {
    audit_options opt;
    opt.samples = 800;
    opt.seed = 3;
    CHECK(audit_gs_growth(opt).size() == 3);
    CHECK(audit_g_bounds(opt).size() == 4);
    CHECK(audit_dg_formulas(opt).size() == 5);
    CHECK(audit_moller_and_cm(opt).size() == 2);
    CHECK(audit_weight_inequality(opt).size() == 2);
    CHECK(audit_kernel_composite(opt).size() == 4);
}

#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"
#include "tdflow/linalg.hpp"

using namespace tdflow;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

double orthonormality_defect(const tensor& m) {
    const index_t n = m.extent(0), r = m.extent(1);
    double worst = 0.0;
    for (index_t i = 0; i < r; ++i)
        for (index_t j = 0; j < r; ++j) {
            double dot = 0.0;
            for (index_t k = 0; k < n; ++k) dot += m.at({k, i}) * m.at({k, j});
            worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
        }
    return worst;
}

double svd_error(const tensor& a, const svd_result& f) { return relative_diff(f.reconstruct(), a); }

}  // namespace

TEST_CASE("truncated_svd basics", "[linalg]") {
    SECTION("identity matrix has unit spectrum") {
        tensor a({4, 4});
        for (index_t i = 0; i < 4; ++i) a.at({i, i}) = 1.0;
        svd_result f = truncated_svd(a, 4);
        for (double s : f.s) REQUIRE_THAT(s, WithinAbs(1.0, 1e-12));
        REQUIRE(relative_diff(f.reconstruct(), a) < 1e-10);
    }
    SECTION("diag(3,2,1) truncated to r=2") {
        tensor a({3, 3});
        a.at({0, 0}) = 3.0;
        a.at({1, 1}) = 2.0;
        a.at({2, 2}) = 1.0;
        svd_result f = truncated_svd(a, 2);
        REQUIRE_THAT(f.s[0], WithinAbs(3.0, 1e-12));
        REQUIRE_THAT(f.s[1], WithinAbs(2.0, 1e-12));
        const tensor rec = f.reconstruct();
        REQUIRE_THAT((a - rec).frobenius_norm(), WithinAbs(1.0, 1e-10));
    }
    SECTION("rank out of range throws") {
        tensor a({3, 5});
        REQUIRE_THROWS_AS(truncated_svd(a, 0), rank_error);
        REQUIRE_THROWS_AS(truncated_svd(a, 4), rank_error);
    }
}

TEST_CASE("truncated_svd against the Gram-matrix oracle", "[linalg]") {
    rng r(2024);
    for (int rep = 0; rep < 10; ++rep) {
        const index_t d1 = 3 + r.below(8);
        const index_t d2 = 3 + r.below(8);
        tensor a = tensor::random_uniform({d1, d2}, r);
        const index_t kmax = std::min(d1, d2);
        for (index_t rank = 1; rank <= kmax; ++rank) {
            svd_result f = truncated_svd(a, rank);
            REQUIRE(orthonormality_defect(f.u) < 1e-8);
            REQUIRE(orthonormality_defect(f.v) < 1e-8);
            for (std::size_t i = 0; i + 1 < f.s.size(); ++i) REQUIRE(f.s[i] >= f.s[i + 1] - 1e-12);
            const double mine = (f.reconstruct() - a).frobenius_norm();
            const double oracle_err = (oracle::gram_low_rank(a, rank) - a).frobenius_norm();
            REQUIRE(mine <= oracle_err + 1e-8 * (1.0 + oracle_err));
        }
    }
}

TEST_CASE("full-rank svd reconstructs and error is monotone in rank", "[linalg]") {
    rng r(5);
    tensor a = tensor::random_uniform({8, 5}, r);
    svd_result full = truncated_svd(a, 5);
    REQUIRE(svd_error(a, full) < 1e-10);

    double prev = std::numeric_limits<double>::infinity();
    for (index_t rank = 1; rank <= 5; ++rank) {
        const double e = (truncated_svd(a, rank).reconstruct() - a).frobenius_norm();
        REQUIRE(e <= prev + 1e-12);
        prev = e;
    }
}

TEST_CASE("svd handles degenerate inputs", "[linalg]") {
    SECTION("zero matrix") {
        tensor a({4, 6});
        svd_result f = truncated_svd(a, 4);
        for (double s : f.s) REQUIRE(s == 0.0);
        REQUIRE(orthonormality_defect(f.u) < 1e-10);
        REQUIRE(orthonormality_defect(f.v) < 1e-10);
    }
    SECTION("rank-1 matrix with full requested rank") {
        rng r(11);
        tensor u = tensor::random_uniform({6, 1}, r);
        tensor v = tensor::random_uniform({4, 1}, r);
        tensor a = matmul(u, transpose(v));
        svd_result f = truncated_svd(a, 4);
        REQUIRE(f.s[0] > 0.0);
        for (std::size_t i = 1; i < 4; ++i) REQUIRE(f.s[i] < 1e-10 * f.s[0]);
        REQUIRE(orthonormality_defect(f.u) < 1e-8);
        REQUIRE(svd_error(a, f) < 1e-10);
    }
}

TEST_CASE("solve_least_squares", "[linalg]") {
    rng r(17);
    SECTION("identity system returns rhs") {
        tensor a({3, 3});
        for (index_t i = 0; i < 3; ++i) a.at({i, i}) = 1.0;
        tensor b = tensor::random_uniform({3, 2}, r);
        tensor x = solve_least_squares(a, b);
        REQUIRE(relative_diff(x, b) < 1e-12);
    }
    SECTION("overdetermined consistent system recovers x exactly") {
        tensor a = tensor::random_uniform({7, 3}, r);
        tensor x0 = tensor::random_uniform({3, 2}, r);
        tensor b = matmul(a, x0);
        tensor x = solve_least_squares(a, b);
        REQUIRE(relative_diff(x, x0) < 1e-9);
    }
    SECTION("random 6x3 system matches the normal-equations oracle") {
        tensor a = tensor::random_uniform({6, 3}, r);
        tensor b = tensor::random_uniform({6, 2}, r);
        tensor x = solve_least_squares(a, b);
        tensor want = oracle::normal_equations_solve(a, b);
        REQUIRE((x - want).frobenius_norm() < 1e-9);
    }
    SECTION("rank-deficient system returns the minimum-norm solution") {
        // a has identical columns; any solution splits weight between them and
        // the minimum-norm one splits evenly.
        tensor a({4, 2});
        for (index_t i = 0; i < 4; ++i) {
            a.at({i, 0}) = static_cast<double>(i + 1);
            a.at({i, 1}) = static_cast<double>(i + 1);
        }
        tensor b({4, 1});
        for (index_t i = 0; i < 4; ++i) b.at({i, 0}) = 2.0 * static_cast<double>(i + 1);
        tensor x = solve_least_squares(a, b);
        REQUIRE_THAT(x.at({0, 0}), WithinAbs(1.0, 1e-10));
        REQUIRE_THAT(x.at({1, 0}), WithinAbs(1.0, 1e-10));
    }
}

TEST_CASE("khatri_rao", "[linalg]") {
    rng r(23);
    SECTION("single input is the identity operation") {
        tensor a = tensor::random_uniform({4, 3}, r);
        tensor kr = khatri_rao({a});
        REQUIRE(relative_diff(kr, a) == 0.0);
    }
    SECTION("two 2x1 columns produce the Kronecker column") {
        tensor a({2, 1}, {1.0, 2.0});   // [a;b]
        tensor b({2, 1}, {3.0, 4.0});   // [c;d]
        tensor kr = khatri_rao({a, b});
        REQUIRE(kr.shape() == shape_t{4, 1});
        REQUIRE(kr[0] == 3.0);   // ac
        REQUIRE(kr[1] == 4.0);   // ad
        REQUIRE(kr[2] == 6.0);   // bc
        REQUIRE(kr[3] == 8.0);   // bd
    }
    SECTION("column-count mismatch throws") {
        tensor a = tensor::random_uniform({2, 3}, r);
        tensor b = tensor::random_uniform({2, 2}, r);
        REQUIRE_THROWS_AS(khatri_rao({a, b}), shape_error);
    }
    SECTION("cp unfolding identity X_(1) = A1 (A2 kr A3)^T") {
        // Build a rank-3 order-3 tensor from factors and verify the mode-1
        // unfolding identity; the composed tensor comes from explicit loops.
        const index_t r3 = 3;
        tensor a1 = tensor::random_uniform({4, r3}, r);
        tensor a2 = tensor::random_uniform({3, r3}, r);
        tensor a3 = tensor::random_uniform({2, r3}, r);
        tensor x({4, 3, 2});
        for (index_t rho = 0; rho < r3; ++rho)
            for (index_t i = 0; i < 4; ++i)
                for (index_t j = 0; j < 3; ++j)
                    for (index_t k = 0; k < 2; ++k)
                        x.at({i, j, k}) += a1.at({i, rho}) * a2.at({j, rho}) * a3.at({k, rho});
        tensor unfolded = x.reshape({4, 6});
        tensor want = matmul(a1, transpose(khatri_rao({a2, a3})));
        REQUIRE(relative_diff(unfolded, want) < 1e-12);
    }
}

TEST_CASE("solve_linear", "[linalg]") {
    rng r(31);
    tensor a = tensor::random_uniform({5, 5}, r);
    for (index_t i = 0; i < 5; ++i) a.at({i, i}) += 5.0;  // keep it comfortably nonsingular
    tensor x0 = tensor::random_uniform({5, 3}, r);
    tensor b = matmul(a, x0);
    tensor x = solve_linear(a, b);
    REQUIRE(relative_diff(x, x0) < 1e-10);
}

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "biasmeter/special.hpp"

#include <boost/math/distributions/non_central_chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>

using namespace biasmeter::special;

TEST_CASE("log_normal_cdf against Boost and long-double erfc") {
    const boost::math::normal_distribution<double> normal;
    for (double y = -30.0; y <= 8.0; y += 0.37) {
        const double ref = std::log(boost::math::cdf(normal, y));
        CHECK(log_normal_cdf(y) == doctest::Approx(ref).epsilon(1e-12));
    }
    // Below the erfc branch, compare with the long-double erfc where it is still representable.
    for (double y : {-35.5, -40.0, -60.0, -100.0}) {
        const long double ref = std::log(0.5L * std::erfc(static_cast<long double>(-y) / std::sqrt(2.0L)));
        CHECK(log_normal_cdf(y) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-10));
    }
    CHECK(std::isfinite(log_normal_cdf(-1e4)));
    CHECK(log_normal_cdf(0.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("log_gamma_p against Boost gamma_p") {
    for (double a : {0.05, 0.5, 1.0, 2.5, 10.0, 75.0, 500.0})
        for (double x : {1e-3, 0.1, 1.0, 3.0, 9.5, 40.0, 120.0, 600.0}) {
            const double ref = boost::math::gamma_p(a, x);
            if (ref < 1e-300) continue;
            CHECK(log_gamma_p(a, x) == doctest::Approx(std::log(ref)).epsilon(1e-11));
        }
    CHECK(log_gamma_p(2.0, 0.0) == -std::numeric_limits<double>::infinity());
    CHECK(std::isnan(log_gamma_p(-1.0, 1.0)));
}

TEST_CASE("log_add_exp") {
    CHECK(log_add_exp(std::log(2.0), std::log(3.0)) == doctest::Approx(std::log(5.0)).epsilon(1e-15));
    CHECK(log_add_exp(-std::numeric_limits<double>::infinity(), 1.5) == 1.5);
    CHECK(log_add_exp(1000.0, 1000.0) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("ncx2_logpdf_standard closed forms") {
    // k = 2, lambda = 0 is Exp(1/2): pdf(2) = e^{-1}/2.
    CHECK(ncx2_logpdf_standard(2.0, 2.0, 0.0) == doctest::Approx(std::log(0.5) - 1.0).epsilon(1e-14));
    CHECK(ncx2_logpdf_standard(2.0, 2.0, 0.0) == doctest::Approx(-1.693147).epsilon(1e-6));
    CHECK(ncx2_logpdf_standard(0.0, 2.0, 1.0) == -std::numeric_limits<double>::infinity());
    CHECK(ncx2_logpdf_standard(-1.0, 2.0, 1.0) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("ncx2_logpdf_standard against Boost") {
    for (double k : {0.5, 1.0, 3.0, 5.0, 20.0, 100.0, 1000.0})
        for (double lambda : {0.0, 0.1, 3.0, 10.0, 100.0, 1500.0}) {
            const boost::math::non_central_chi_squared_distribution<double> dist(k, lambda);
            const double mean = k + lambda;
            const double sd = std::sqrt(2.0 * k + 4.0 * lambda);
            for (double t : {-2.5, -1.0, 0.0, 0.7, 2.0, 4.0}) {
                const double x = mean + t * sd;
                if (x <= 1e-3) continue;
                const double ref = boost::math::pdf(dist, x);
                if (!(ref > 1e-290)) continue;
                INFO("k=" << k << " lambda=" << lambda << " x=" << x);
                CHECK(ncx2_logpdf_standard(x, k, lambda) == doctest::Approx(std::log(ref)).epsilon(1e-9));
            }
        }
}

TEST_CASE("ncx2 density integrates to one (quadrature)") {
    for (double k : {1.5, 5.0, 30.0})
        for (double lambda : {0.0, 3.0, 40.0}) {
            auto f = [&](double x) { return std::exp(ncx2_logpdf_standard(x, k, lambda)); };
            const double upper = k + lambda + 40.0 * std::sqrt(2.0 * k + 4.0 * lambda);
            const double total = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, upper, 15, 1e-12);
            INFO("k=" << k << " lambda=" << lambda);
            CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
        }
}

TEST_CASE("ncx2_log_cdf_standard against Boost and quadrature") {
    for (double k : {0.5, 2.0, 5.0, 20.0, 100.0, 900.0})
        for (double lambda : {0.0, 1.0, 10.0, 90.0, 700.0}) {
            const boost::math::non_central_chi_squared_distribution<double> dist(k, lambda);
            const double mean = k + lambda;
            const double sd = std::sqrt(2.0 * k + 4.0 * lambda);
            for (double t : {-2.0, -1.0, 0.0, 1.0, 3.0}) {
                const double x = mean + t * sd;
                if (x <= 1e-2) continue;
                const double ref = boost::math::cdf(dist, x);
                if (!(ref > 1e-280) || ref > 1.0 - 1e-10) continue;
                INFO("k=" << k << " lambda=" << lambda << " x=" << x);
                CHECK(ncx2_log_cdf_standard(x, k, lambda) == doctest::Approx(std::log(ref)).epsilon(1e-8));
            }
        }
    // Independent route: integrate the density.
    for (double z : {0.5, 2.0, 7.0, 15.0}) {
        auto f = [](double x) { return std::exp(ncx2_logpdf_standard(x, 5.0, 3.0)); };
        const double ref = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, z, 15, 1e-13);
        CHECK(std::exp(ncx2_log_cdf_standard(z, 5.0, 3.0)) == doctest::Approx(ref).epsilon(1e-9));
    }
}

TEST_CASE("ncx2_log_cdf_standard stays finite deep in the lower tail") {
    const double v = ncx2_log_cdf_standard(1.0, 1000.0, 100.0);
    CHECK(std::isfinite(v));
    CHECK(v < -1000.0);
    // Monotone in x.
    double prev = -std::numeric_limits<double>::infinity();
    for (double x = 50.0; x <= 2000.0; x += 50.0) {
        const double cur = ncx2_log_cdf_standard(x, 1000.0, 100.0);
        CHECK(cur >= prev);
        prev = cur;
    }
    CHECK(ncx2_log_cdf_standard(0.0, 3.0, 1.0) == -std::numeric_limits<double>::infinity());
    CHECK(ncx2_log_cdf_standard(1e9, 3.0, 1.0) > -1e-15);
}

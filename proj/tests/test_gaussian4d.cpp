#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "endowave/gaussian4d.hpp"
#include "helpers.hpp"

using namespace endowave;
using test::random_primitive;
using test::random_unit_quat;

TEST_CASE("build_cov4 identity case") {
    const Mat4 cov = build_cov4(Vec4::Zero(), Vec4(1, 0, 0, 0), Vec4(1, 0, 0, 0));
    CHECK((cov - Mat4::Identity()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("build_cov4 symmetric and positive definite") {
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        Vec4 ls;
        for (int k = 0; k < 4; ++k) ls[k] = rng.uniform(-1.0, 1.0);
        const Mat4 cov = build_cov4(ls, random_unit_quat(rng), random_unit_quat(rng));
        CHECK((cov - cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
        Eigen::SelfAdjointEigenSolver<Mat4> es(cov); // dense eigensolver oracle
        CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
}

TEST_CASE("conditioning with zero cross-covariance") {
    Rng rng(12);
    Primitive4D p = random_primitive(rng);
    p.rot_left = Vec4(1, 0, 0, 0);
    p.rot_right = Vec4(1, 0, 0, 0); // identity rotation -> diagonal cov4
    for (double t : {0.0, 0.3, 0.9}) {
        const auto g = condition_at_time(p, t);
        CHECK((g.mean3 - p.mu_x).norm() < 1e-14);
        Mat3 expected = Mat3::Zero();
        for (int k = 0; k < 3; ++k) expected(k, k) = std::exp(2.0 * p.log_scale[k]);
        CHECK((g.cov3 - expected).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK(condition_at_time(p, p.mu_t).temporal_weight == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("degenerate temporal variance is clamped and counted") {
    Primitive4D p(1, 1);
    p.log_scale = Vec4(0.0, 0.0, 0.0, -12.0); // sigma_tt = e^-24, far below the floor
    floor_counters().reset();
    const auto g = condition_at_time(p, p.mu_t + 0.5);
    CHECK(floor_counters().sigma_tt.load() == 1);
    // The clamp acts: the weight is exp(-dt^2 / (2 * kCovFloor)), not exp(-dt^2 / (2 e-24)).
    CHECK(g.temporal_weight == doctest::Approx(std::exp(-0.25 / (2.0 * kCovFloor))));
    CHECK(std::isfinite(g.mean3.norm()));
    floor_counters().reset();
}

TEST_CASE("gaussian factorization: density equals temporal weight times conditional") {
    Rng rng(13);
    for (int i = 0; i < 300; ++i) {
        const Primitive4D p = random_primitive(rng);
        const Vec3 x(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
        const double t = rng.uniform();
        const auto g = condition_at_time(p, t);
        const Vec3 d = x - g.mean3;
        const double conditional = std::exp(-0.5 * d.dot(g.cov3.ldlt().solve(d)));
        const double dense = eval_density4(p, x, t);
        const double expected = g.temporal_weight * conditional;
        CHECK(std::abs(dense - expected) <= 1e-10 * std::max(dense, expected));
    }
}

TEST_CASE("eval_density4 against direct matrix oracle") {
    Rng rng(14);
    for (int i = 0; i < 200; ++i) {
        const Primitive4D p = random_primitive(rng);
        const Vec3 x(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
        const double t = rng.uniform();
        // Oracle: explicit inverse of the dense 4x4 covariance.
        const Mat4 cov = build_cov4(p.log_scale, p.rot_left, p.rot_right);
        Vec4 d;
        d << x - p.mu_x, t - p.mu_t;
        const double expected = std::exp(-0.5 * d.dot(cov.inverse() * d));
        CHECK(eval_density4(p, x, t) == doctest::Approx(expected).epsilon(1e-12));
    }
    const Primitive4D p = random_primitive(rng);
    CHECK(eval_density4(p, p.mu_x, p.mu_t) == doctest::Approx(1.0).epsilon(1e-14));

    Primitive4D iso(1, 1);
    CHECK(eval_density4(iso, Vec3(1, 0, 0), 0.0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-14));
}

TEST_CASE("position_at matches the conditioning closed form and is affine in t") {
    Rng rng(15);
    for (int i = 0; i < 100; ++i) {
        const Primitive4D p = random_primitive(rng);
        const Cov4Blocks blk = cov4_blocks(p);
        const double t = rng.uniform();
        const Vec3 expected = p.mu_x + blk.sigma_xt * ((t - p.mu_t) / blk.sigma_tt);
        CHECK((position_at(p, t) - expected).norm() < 1e-12);

        // Affine: slope from two points predicts a third exactly.
        const Vec3 p0 = position_at(p, 0.0);
        const Vec3 p1 = position_at(p, 1.0);
        const Vec3 mid = position_at(p, 0.5);
        CHECK((mid - 0.5 * (p0 + p1)).norm() < 1e-12);
    }

    Primitive4D stat = random_primitive(rng);
    stat.rot_left = Vec4(1, 0, 0, 0);
    stat.rot_right = Vec4(1, 0, 0, 0);
    CHECK((position_at(stat, 0.83) - stat.mu_x).norm() < 1e-14);
    const Primitive4D any = random_primitive(rng);
    CHECK((position_at(any, any.mu_t) - any.mu_x).norm() < 1e-14);
}

namespace {

// Gauss-Legendre nodes/weights on [-1, 1] by Newton iteration on P_n.
void gauss_legendre(int n, std::vector<double>* xs, std::vector<double>* ws) {
    xs->resize(n);
    ws->resize(n);
    for (int i = 0; i < n; ++i) {
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            pp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / pp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        (*xs)[i] = x;
        (*ws)[i] = 2.0 / ((1.0 - x * x) * pp * pp);
    }
}

} // namespace

TEST_CASE("real spherical harmonics basics and orthonormality by quadrature") {
    CHECK(sh::eval(0, 0, Vec3(0.3, -0.5, 0.81).normalized()) ==
          doctest::Approx(0.28209479177).epsilon(1e-10));
    CHECK(sh::eval(1, 0, Vec3(0, 0, 1)) == doctest::Approx(0.48860251190).epsilon(1e-10));
    CHECK_THROWS_AS(sh::eval(4, 0, Vec3(0, 0, 1)), std::invalid_argument);
    CHECK_THROWS_AS(sh::eval(2, 3, Vec3(0, 0, 1)), std::invalid_argument);

    // Product Gauss-Legendre x uniform longitude grid integrates these
    // polynomial products exactly.
    std::vector<double> xs, ws;
    gauss_legendre(10, &xs, &ws);
    const int n_phi = 24;
    Eigen::Matrix<double, 16, 16> gram = Eigen::Matrix<double, 16, 16>::Zero();
    for (int iu = 0; iu < 10; ++iu) {
        const double u = xs[iu];
        const double su = std::sqrt(1.0 - u * u);
        for (int ip = 0; ip < n_phi; ++ip) {
            const double phi = 2.0 * std::numbers::pi * ip / n_phi;
            const Vec3 dir(su * std::cos(phi), su * std::sin(phi), u);
            double b[16];
            sh::eval_basis(3, dir, b);
            const double w = ws[iu] * (2.0 * std::numbers::pi / n_phi);
            for (int a = 0; a < 16; ++a)
                for (int c = 0; c < 16; ++c) gram(a, c) += w * b[a] * b[c];
        }
    }
    CHECK((gram - Eigen::Matrix<double, 16, 16>::Identity()).cwiseAbs().maxCoeff() < 1e-6);
}

namespace {

// Phase-free reference: plain cosine temporal atoms.
Vec3 reference_cosine_basis_eval(const Primitive4D& p, const Vec3& dir, double t) {
    double y[16];
    sh::eval_basis(p.sh_degree, dir, y);
    Vec3 out = Vec3::Zero();
    for (int n = 0; n <= p.n_temporal; ++n)
        for (int k = 0; k < p.basis_count(); ++k)
            for (int c = 0; c < 3; ++c)
                out[c] += p.sh_at(n, k, c) * y[k] * std::cos(2.0 * std::numbers::pi * n * t);
    for (int c = 0; c < 3; ++c) out[c] = std::max(0.0, out[c] + 0.5);
    return out;
}

} // namespace

TEST_CASE("teash temporal atoms") {
    Rng rng(16);

    SUBCASE("only n=0 coefficients: independent of t") {
        Primitive4D p = random_primitive(rng);
        for (int n = 1; n <= p.n_temporal; ++n)
            for (int k = 0; k < p.basis_count(); ++k)
                for (int c = 0; c < 3; ++c) p.sh_at(n, k, c) = 0.0;
        const Vec3 dir = Vec3(0.2, 0.5, 0.9).normalized();
        const Vec3 a = teash_eval(p, dir, 0.0);
        for (double t : {0.13, 0.5, 0.99})
            CHECK((teash_eval(p, dir, t) - a).norm() < 1e-14);
    }

    SUBCASE("zero phases reduce to the phase-free cosine basis") {
        for (int i = 0; i < 20; ++i) {
            Primitive4D p = random_primitive(rng);
            std::fill(p.phases.begin(), p.phases.end(), 0.0);
            const Vec3 dir = Vec3(rng.normal(), rng.normal(), rng.normal()).normalized();
            const double t = rng.uniform();
            CHECK((teash_eval(p, dir, t) - reference_cosine_basis_eval(p, dir, t)).norm() < 1e-14);
        }
    }

    SUBCASE("single coefficient closed form") {
        Primitive4D p(3, 2);
        p.sh_at(1, 0, 0) = 1.0; // n = 1, DC basis, red channel
        p.phases[1] = std::numbers::pi / 2.0;
        const Vec3 dir = Vec3(0.3, -0.4, 0.87).normalized();
        const double y00 = 0.28209479177;
        for (double t : {0.0, 0.25, 0.5}) {
            const double expected =
                std::max(0.0, 0.5 + y00 * std::cos(2.0 * std::numbers::pi * t + std::numbers::pi / 2.0));
            CHECK(teash_eval(p, dir, t)[0] == doctest::Approx(expected).epsilon(1e-9));
            CHECK(teash_eval(p, dir, t)[1] == doctest::Approx(0.5).epsilon(1e-12));
        }
    }
}

TEST_CASE("primitive container round trips") {
    Rng rng(17);
    std::vector<Primitive4D> scene;
    for (int i = 0; i < 7; ++i) scene.push_back(random_primitive(rng));
    const std::string dir = (std::filesystem::temp_directory_path() / "ew4d_test").string();
    std::filesystem::create_directories(dir);

    SUBCASE("binary round trip is bit exact") {
        save_primitives(scene, dir + "/scene.ew4d");
        const auto loaded = load_primitives(dir + "/scene.ew4d");
        REQUIRE(loaded.size() == scene.size());
        for (size_t i = 0; i < scene.size(); ++i) {
            CHECK(loaded[i].mu_x == scene[i].mu_x);
            CHECK(loaded[i].mu_t == scene[i].mu_t);
            CHECK(loaded[i].log_scale == scene[i].log_scale);
            CHECK(loaded[i].rot_left == scene[i].rot_left);
            CHECK(loaded[i].rot_right == scene[i].rot_right);
            CHECK(loaded[i].logit_opacity == scene[i].logit_opacity);
            CHECK(loaded[i].sh_coeffs == scene[i].sh_coeffs);
            CHECK(loaded[i].phases == scene[i].phases);
        }
    }

    SUBCASE("json round trip") {
        save_primitives_json(scene, dir + "/scene.json");
        const auto loaded = load_primitives_json(dir + "/scene.json");
        REQUIRE(loaded.size() == scene.size());
        for (size_t i = 0; i < scene.size(); ++i)
            CHECK((loaded[i].mu_x - scene[i].mu_x).norm() < 1e-15);
    }

    SUBCASE("bad magic is rejected") {
        std::FILE* f = std::fopen((dir + "/bad.ew4d").c_str(), "wb");
        std::fwrite("XXXX0000000000000000", 1, 20, f);
        std::fclose(f);
        CHECK_THROWS_WITH_AS(load_primitives(dir + "/bad.ew4d"), doctest::Contains("bad magic"),
                             std::runtime_error);
    }
}

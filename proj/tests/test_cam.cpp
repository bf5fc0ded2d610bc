#include <doctest.h>

#include <taflab/cam.hpp>
#include <taflab/nn.hpp>
#include <taflab/rng.hpp>

#include "grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

using namespace taflab;
using taflab::testing::central_differences;
using taflab::testing::max_rel_err;

using DTensor = TensorT<double>;

namespace {

// Reference ranking: pair-sort on (mass, index), independent of rank_frames.
template <class S>
std::vector<std::size_t> reference_rank(const std::vector<S>& mass) {
    std::vector<std::pair<S, std::size_t>> keyed;
    for (std::size_t i = 0; i < mass.size(); ++i) keyed.push_back({mass[i], i});
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::size_t> pi;
    for (auto& [m, i] : keyed) pi.push_back(i);
    return pi;
}

CamStackT<double> stack_from_raw(const std::vector<double>& raw, std::size_t T, std::size_t h,
                                 std::size_t w) {
    CamStackT<double> st;
    st.frames = T;
    st.h = h;
    st.w = w;
    st.raw = DTensor::from_data({T, h, w}, raw);
    auto [maps, degen] = normalize_stack(st.raw);
    st.maps = maps;
    st.degenerate = degen;
    st.frame_mass.resize(T);
    for (std::size_t t = 0; t < T; ++t)
        st.frame_mass[t] = std::accumulate(st.maps.values().begin() + static_cast<std::ptrdiff_t>(t * h * w),
                                           st.maps.values().begin() + static_cast<std::ptrdiff_t>((t + 1) * h * w),
                                           0.0);
    st.pi = rank_frames(st.frame_mass);
    return st;
}

}  // namespace

TEST_CASE("stack normalization arithmetic") {
    // min = 0: output is raw / max
    std::vector<double> a{0, 1, 2, 3, 4, 5};
    auto [na, da] = normalize_stack_values(a, 3);
    CHECK(!da);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(na[i] == doctest::Approx(a[i] / 5.0));

    // min = -2, max = 8: the literal formula maps the max to 10/8 = 1.25
    std::vector<double> b{-2, 0, 3, 8};
    auto [nb, db] = normalize_stack_values(b, 2);
    CHECK(!db);
    CHECK(nb[0] == doctest::Approx(0.0));
    CHECK(nb[3] == doctest::Approx(1.25));

    // flat stack degenerates to the uniform value 1/(T*h*w)
    std::vector<double> c(8, 3.5);
    auto [nc, dc] = normalize_stack_values(c, 2);
    CHECK(dc);
    for (double v : nc) CHECK(v == doctest::Approx(1.0 / 8.0));

    // all-negative stack (max <= 0) also degenerates
    std::vector<double> d{-3, -1, -2, -5};
    CHECK(normalize_stack_values(d, 2).second);
}

TEST_CASE("graph normalization agrees with the value-level form and anchors min/max") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> raw(4 * 3 * 3);
        for (auto& v : raw) v = rng.uniform(-2, 6);
        auto t = DTensor::from_data({4, 3, 3}, raw);
        auto [g, degen] = normalize_stack(t);
        auto [ref, degen2] = normalize_stack_values(raw, 4);
        CHECK(degen == degen2);
        REQUIRE(!degen);
        for (std::size_t i = 0; i < raw.size(); ++i)
            CHECK(g.values()[i] == doctest::Approx(ref[i]).epsilon(1e-12));

        const double mn = *std::min_element(raw.begin(), raw.end());
        const double mx = *std::max_element(raw.begin(), raw.end());
        const double gmin = *std::min_element(g.values().begin(), g.values().end());
        const double gmax = *std::max_element(g.values().begin(), g.values().end());
        CHECK(gmin == 0.0);  // global minimum anchors exactly
        CHECK(std::abs(gmax - (mx - mn) / mx) < 1e-6);
    }
}

TEST_CASE("frame ranking") {
    CHECK(rank_frames(std::vector<double>{3, 1, 2}) == std::vector<std::size_t>{1, 2, 0});

    std::vector<double> equal(6, 0.5);
    CHECK(rank_frames(equal) == std::vector<std::size_t>{0, 1, 2, 3, 4, 5});

    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> mass(8);
        for (auto& m : mass) m = rng.uniform_int(0, 4);  // duplicates force tie-breaks
        auto pi = rank_frames(mass);
        CHECK(pi == reference_rank(mass));
        auto sorted = pi;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);  // bijection
        for (std::size_t i = 0; i + 1 < pi.size(); ++i)
            CHECK(mass[pi[i]] <= mass[pi[i + 1]]);
    }
}

TEST_CASE("cam loss values") {
    // constant stack, N = T: loss equals the constant
    auto st = stack_from_raw({2, 2, 2, 2, 2, 2, 2, 2}, 2, 2, 2);
    CHECK(st.degenerate);
    CHECK(cam_loss(st, 2).item() == doctest::Approx(1.0 / 8.0));

    // N = 1: spatial mean of the smallest-mass frame's map
    std::vector<double> raw{0, 1, 2, 3, 10, 11, 12, 13};
    auto st2 = stack_from_raw(raw, 2, 2, 2);
    REQUIRE(st2.pi[0] == 0);
    double expect = 0;
    for (int i = 0; i < 4; ++i) expect += st2.maps.values()[i];
    CHECK(cam_loss(st2, 1).item() == doctest::Approx(expect / 4.0));

    CHECK_THROWS_AS((void)cam_loss(st2, 0), DomainError);
    CHECK_THROWS_AS((void)cam_loss(st2, 3), DomainError);
}

TEST_CASE("cam loss matches enumeration of the smallest frames, and prefixes nest") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> raw(6 * 2 * 2);
        for (auto& v : raw) v = rng.uniform(-1, 4);
        auto st = stack_from_raw(raw, 6, 2, 2);
        REQUIRE(!st.degenerate);

        // enumeration oracle for N = 3: scan all 3-subsets for the smallest
        // total mass, lexicographic tie-break
        const std::size_t T = 6;
        double best_mass = 1e300;
        std::array<std::size_t, 3> best{};
        for (std::size_t a = 0; a < T; ++a)
            for (std::size_t b = a + 1; b < T; ++b)
                for (std::size_t c = b + 1; c < T; ++c) {
                    const double m = st.frame_mass[a] + st.frame_mass[b] + st.frame_mass[c];
                    if (m < best_mass - 1e-12) {
                        best_mass = m;
                        best = {a, b, c};
                    }
                }
        double expect = 0;
        for (std::size_t f : best)
            for (std::size_t i = 0; i < 4; ++i) expect += st.maps.values()[f * 4 + i];
        expect /= 3.0 * 4.0;
        CHECK(cam_loss(st, 3).item() == doctest::Approx(expect).epsilon(1e-9));

        // increasing N never drops a previously selected frame
        for (std::size_t n = 1; n < T; ++n) {
            std::vector<std::size_t> small(st.pi.begin(), st.pi.begin() + static_cast<std::ptrdiff_t>(n));
            std::vector<std::size_t> big(st.pi.begin(), st.pi.begin() + static_cast<std::ptrdiff_t>(n + 1));
            for (std::size_t f : small) CHECK(std::find(big.begin(), big.end(), f) != big.end());
        }
    }
}

TEST_CASE("normalization gradient matches central differences") {
    Rng rng(17);
    std::vector<double> raw(3 * 2 * 2);
    for (auto& v : raw) v = rng.uniform(0.1, 5.0);  // well-separated, positive max
    std::vector<double> probe(raw.size());
    for (auto& v : probe) v = rng.uniform(-1, 1);

    auto f = [&](const std::vector<double>& x) {
        auto t = DTensor::from_data({3, 2, 2}, x);
        auto [m, d] = normalize_stack(t);
        return reduce_sum(mul(m, DTensor::from_data({3, 2, 2}, probe))).item();
    };
    auto t = DTensor::from_data({3, 2, 2}, raw, true);
    auto [m, d] = normalize_stack(t);
    REQUIRE(!d);
    backward(reduce_sum(mul(m, DTensor::from_data({3, 2, 2}, probe))));
    CHECK(max_rel_err(t.grad(), central_differences(f, raw)) < 1e-4);
}

TEST_CASE("raw maps match a symbolic hand derivation on a one-conv network") {
    // features F[t,c] = wconv[c] * x_t (1x1 conv); logits z_k = sum_c fc[c][k]
    // * mean(F[.,c]). The cross-entropy feature gradient is constant over
    // (t,y,x): g_c = sum_k (p_k - onehot_k) * fc[c][k] / (T*h*w), so the raw
    // map is (sum_c g_c * wconv[c]) * x_t.
    const std::size_t T = 2, hw = 4;
    const double wc0 = 0.7, wc1 = -1.3;
    const double fc[2][2] = {{0.4, -0.9}, {1.1, 0.2}};
    std::vector<double> xv{0.1, 0.5, -0.3, 0.8, 0.2, -0.6, 0.9, 0.4};
    const int target = 1;

    auto x = DTensor::from_data({T, 1, 2, 2}, xv, true);
    auto conv_w = DTensor::from_data({2, 1, 1, 1}, {wc0, wc1}, true);
    auto features = conv2d(x, conv_w, 1, 0);  // [T,2,2,2]
    auto pooled = reduce_mean(features, {2, 3});
    auto per_clip = reduce_mean(reshape(pooled, {1, T, 2}), {1});
    auto fc_w = DTensor::from_data({2, 2}, {fc[0][0], fc[0][1], fc[1][0], fc[1][1]}, true);
    auto logits = matmul(per_clip, fc_w);

    auto stacks = cam_from_forward(features, logits, 1, T, std::vector<int>{target});
    auto& st = stacks[0];

    // hand path
    std::vector<double> lv(2);
    for (int k = 0; k < 2; ++k) {
        double zk = 0;
        for (int c = 0; c < 2; ++c) {
            double mean_f = 0;
            const double w = c == 0 ? wc0 : wc1;
            for (double v : xv) mean_f += w * v;
            mean_f /= double(T * hw);
            zk += fc[c][k] * mean_f;
        }
        lv[static_cast<std::size_t>(k)] = zk;
    }
    auto p = softmax_rows(lv, 1, 2);
    double g0 = 0, g1 = 0;
    for (int k = 0; k < 2; ++k) {
        const double d = p[static_cast<std::size_t>(k)] - (k == target ? 1.0 : 0.0);
        g0 += d * fc[0][k] / double(T * hw);
        g1 += d * fc[1][k] / double(T * hw);
    }
    const double scale = g0 * wc0 + g1 * wc1;
    for (std::size_t i = 0; i < xv.size(); ++i)
        CHECK(st.raw.values()[i] == doctest::Approx(scale * xv[i]).epsilon(1e-9));

    // the internal backward pass must not leak gradients
    for (double g : x.grad()) CHECK(g == 0.0);
    for (double g : conv_w.grad()) CHECK(g == 0.0);
}

TEST_CASE("uniform features give equal masses and the identity ranking") {
    // every frame identical and the map flat: mass ties resolve to identity
    auto st = stack_from_raw(std::vector<double>(4 * 2 * 2, 1.0), 4, 2, 2);
    CHECK(st.degenerate);
    for (double m : st.frame_mass) CHECK(m == doctest::Approx(st.frame_mass[0]));
    CHECK(st.pi == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("cam loss gradient reaches the clip through the full model") {
    ModelConfig cfg;
    VideoModel m(cfg);
    Rng rng(23);
    m.init(rng);
    std::vector<float> xv(cfg.frames * 32 * 32);
    for (auto& v : xv) v = static_cast<float>(rng.uniform());
    auto x = Tensor::from_data({cfg.frames, 1, 32, 32}, xv, true);
    auto st = compute_cam(m, x, 5);
    REQUIRE(!st.degenerate);
    backward(cam_loss(st, cfg.frames));
    float mx = 0;
    for (float g : x.grad()) mx = std::max(mx, std::abs(g));
    CHECK(mx > 0.0f);

    // zero-weight model: degenerate stack, flagged, detached uniform maps
    VideoModel z(cfg);
    auto x2 = Tensor::from_data({cfg.frames, 1, 32, 32}, xv);
    auto st2 = compute_cam(z, x2, 5);
    CHECK(st2.degenerate);
    for (float v : st2.maps.values())
        CHECK(v == doctest::Approx(1.0 / double(cfg.frames * 4 * 4)));
}

TEST_CASE("frame mass entropy") {
    // uniform distribution maximizes entropy at log T
    std::vector<double> uni(8, 2.0);
    CHECK(frame_mass_entropy(uni) == doctest::Approx(std::log(8.0)));

    // one-hot mass concentrates: entropy 0
    std::vector<double> hot{0, 0, 5, 0};
    CHECK(frame_mass_entropy(hot) == doctest::Approx(0.0));

    // anything else lies strictly between
    std::vector<double> mid{1, 2, 3, 4};
    CHECK(frame_mass_entropy(mid) > 0.0);
    CHECK(frame_mass_entropy(mid) < std::log(4.0));

    // degenerate zero mass falls back to the uniform value
    std::vector<double> zero(4, 0.0);
    CHECK(frame_mass_entropy(zero) == doctest::Approx(std::log(4.0)));
}

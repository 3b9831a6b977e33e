// Loss functions: hand-computed scalar cases, reduction semantics, analytic
// derivative identities, degeneracies, and central finite-difference checks
// for every gradient (including through the softmax).

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "support/oracles.hpp"
#include "voxseg/losses.hpp"

using namespace voxseg;

namespace {

// single-voxel instance with a chosen true-class probability
Tensor<double> one_voxel_probs(double p_true, std::size_t classes, std::uint8_t true_class) {
    Tensor<double> probs({classes, 1, 1, 1});
    const double rest = (1.0 - p_true) / static_cast<double>(classes - 1);
    for (std::size_t c = 0; c < classes; ++c) probs[c] = c == true_class ? p_true : rest;
    return probs;
}

Grid3<std::uint8_t> one_voxel_target(std::uint8_t cls) {
    Grid3<std::uint8_t> t(1, 1, 1);
    t[0] = cls;
    return t;
}

Tensor<double> unit_weights(std::size_t classes) {
    return Tensor<double>({classes, 1, 1, 1}, 1.0);
}

}  // namespace

TEST_CASE("softmax produces normalized, shift-invariant probabilities", "[losses]") {
    Rng rng(1);
    Tensor<double> logits({4, 3, 2, 2});
    for (auto i = 0u; i < logits.numel(); ++i) logits[i] = 3.0 * rng.normal();
    const auto p = softmax_classes(logits);

    const std::size_t sp = 12;
    for (std::size_t i = 0; i < sp; ++i) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 4; ++c) {
            sum += p[c * sp + i];
            REQUIRE(p[c * sp + i] > 0.0);
            REQUIRE(p[c * sp + i] < 1.0);
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    }

    Tensor<double> shifted = logits;
    for (std::size_t i = 0; i < sp; ++i)
        for (std::size_t c = 0; c < 4; ++c) shifted[c * sp + i] += 500.0;  // huge but uniform
    const auto p2 = softmax_classes(shifted);
    for (std::size_t i = 0; i < p.numel(); ++i)
        REQUIRE(p2[i] == Catch::Approx(p[i]).margin(1e-12));
}

TEST_CASE("cross-entropy scalar cases", "[losses]") {
    SECTION("true-class probability 1/2 costs ln 2") {
        const auto probs = one_voxel_probs(0.5, 4, 2);
        const auto t = one_voxel_target(2);
        REQUIRE(cross_entropy_loss(probs, t) ==
                Catch::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SECTION("uniform prediction over 4 classes costs ln 4") {
        const auto probs = one_voxel_probs(0.25, 4, 0);
        const auto t = one_voxel_target(0);
        REQUIRE(cross_entropy_loss(probs, t) ==
                Catch::Approx(std::log(4.0)).epsilon(1e-12));
    }
    SECTION("perfect prediction costs (almost) nothing") {
        const auto probs = one_voxel_probs(1.0, 4, 1);
        const auto t = one_voxel_target(1);
        REQUIRE(cross_entropy_loss(probs, t) >= 0.0);
        REQUIRE(cross_entropy_loss(probs, t) < 1e-6);
    }
    SECTION("reduction is the mean over voxels") {
        Tensor<double> probs({2, 2, 1, 1});
        probs[0] = 0.5;  // voxel 0, class 0
        probs[1] = 0.25; // voxel 1, class 0
        probs[2] = 0.5;
        probs[3] = 0.75;
        Grid3<std::uint8_t> t(2, 1, 1);
        t[0] = 0;
        t[1] = 0;
        REQUIRE(cross_entropy_loss(probs, t) ==
                Catch::Approx(0.5 * (std::log(2.0) + std::log(4.0))).epsilon(1e-12));
    }
    SECTION("shape and label violations throw") {
        const auto probs = one_voxel_probs(0.5, 4, 0);
        Grid3<std::uint8_t> wrong(2, 1, 1);
        REQUIRE_THROWS_AS(cross_entropy_loss(probs, wrong), ShapeError);
        auto t = one_voxel_target(0);
        t[0] = 4;  // only classes 0..3 exist
        REQUIRE_THROWS_AS(cross_entropy_loss(probs, t), ValidationError);
    }
}

TEST_CASE("focal loss scalar cases and degeneracy", "[losses]") {
    SECTION("gamma 2 at p 1/2 costs ln(2)/4") {
        const auto probs = one_voxel_probs(0.5, 4, 1);
        const auto t = one_voxel_target(1);
        FocalParams fp;
        fp.gamma = 2.0;
        REQUIRE(focal_loss(probs, t, fp) ==
                Catch::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
    }
    SECTION("gamma 0 with unit alpha reduces to cross-entropy") {
        Rng rng(11);
        for (int trial = 0; trial < 10; ++trial) {
            const auto probs = oracle::random_probs(rng, 4, 3, 3, 3);
            const auto t = oracle::random_target(rng, 4, 3, 3, 3);
            FocalParams fp;
            fp.gamma = 0.0;
            REQUIRE(std::abs(focal_loss(probs, t, fp) - cross_entropy_loss(probs, t)) <
                    1e-12);
        }
    }
    SECTION("easy voxels are downweighted harder than under CE") {
        FocalParams fp;
        fp.gamma = 2.0;
        const auto t = one_voxel_target(0);
        for (double p : {0.9, 0.99, 0.999}) {
            const auto probs = one_voxel_probs(p, 4, 0);
            const double ratio = focal_loss(probs, t, fp) / cross_entropy_loss(probs, t);
            REQUIRE(ratio == Catch::Approx((1 - p) * (1 - p)).epsilon(1e-9));
        }
    }
    SECTION("per-class alpha scales each voxel's term") {
        Tensor<double> probs({2, 2, 1, 1});
        probs[0] = 0.5;
        probs[1] = 0.5;
        probs[2] = 0.5;
        probs[3] = 0.5;
        Grid3<std::uint8_t> t(2, 1, 1);
        t[0] = 0;
        t[1] = 1;
        FocalParams fp;
        fp.gamma = 0.0;
        fp.alpha = {3.0, 1.0};
        REQUIRE(focal_loss(probs, t, fp) ==
                Catch::Approx(0.5 * (3.0 + 1.0) * std::log(2.0)).epsilon(1e-12));
    }
    SECTION("focal params are validated") {
        const auto probs = one_voxel_probs(0.5, 4, 0);
        const auto t = one_voxel_target(0);
        FocalParams fp;
        fp.gamma = -1.0;
        REQUIRE_THROWS_AS(focal_loss(probs, t, fp), ValidationError);
        fp.gamma = 2.0;
        fp.alpha = {1.0, 1.0};  // four classes expected
        REQUIRE_THROWS_AS(focal_loss(probs, t, fp), ValidationError);
        fp.alpha = {1.0, 1.0, 0.0, 1.0};
        REQUIRE_THROWS_AS(focal_loss(probs, t, fp), ValidationError);
    }
}

TEST_CASE("dice loss counts foreground classes only", "[losses]") {
    SECTION("perfect one-hot prediction scores ~0") {
        Rng rng(3);
        const auto t = oracle::random_target(rng, 4, 4, 4, 4);
        Tensor<double> probs({4, 4, 4, 4}, 0.0);
        for (std::size_t i = 0; i < t.size(); ++i) probs[t[i] * t.size() + i] = 1.0;
        REQUIRE(dice_loss(probs, t) == Catch::Approx(0.0).margin(1e-4));
    }
    SECTION("fully disjoint prediction scores ~1") {
        // truth: class 1 on half the voxels; prediction: class 1 on the
        // other half -> zero overlap on the only foreground class
        Grid3<std::uint8_t> t(2, 2, 2);
        Tensor<double> probs({2, 2, 2, 2}, 0.0);
        const std::size_t sp = 8;
        for (std::size_t i = 0; i < sp; ++i) {
            t[i] = i < 4 ? 1 : 0;
            const bool predict_fg = i >= 4;
            probs[1 * sp + i] = predict_fg ? 1.0 : 0.0;
            probs[0 * sp + i] = predict_fg ? 0.0 : 1.0;
        }
        REQUIRE(dice_loss(probs, t) == Catch::Approx(1.0).margin(1e-4));
    }
    SECTION("hand-counted partial overlap: 1 - 2*2/(4+2) = 1/3") {
        Grid3<std::uint8_t> t(8, 1, 1);
        Tensor<double> probs({2, 8, 1, 1}, 0.0);
        for (std::size_t i = 0; i < 8; ++i) {
            t[i] = i < 4 ? 1 : 0;                       // |T| = 4
            const bool hit = i < 2;                     // P puts mass on 2 of them
            probs[8 + i] = hit ? 1.0 : 0.0;             // class-1 plane
            probs[i] = hit ? 0.0 : 1.0;                 // class-0 plane
        }
        REQUIRE(dice_loss(probs, t) == Catch::Approx(1.0 / 3.0).margin(1e-5));
    }
    SECTION("class absent from truth and prediction is skipped") {
        // classes 2,3 appear nowhere: loss must average over class 1 alone,
        // so a perfect class-1 prediction scores ~0 rather than being
        // dragged up by two vacuous classes
        Grid3<std::uint8_t> t(2, 2, 1);
        Tensor<double> probs({4, 2, 2, 1}, 0.0);
        const std::size_t sp = 4;
        for (std::size_t i = 0; i < sp; ++i) {
            t[i] = i == 0 ? 1 : 0;
            probs[t[i] * sp + i] = 1.0;
        }
        REQUIRE(dice_loss(probs, t) == Catch::Approx(0.0).margin(1e-4));
    }
    SECTION("background-only truth with background-only prediction scores 0") {
        Grid3<std::uint8_t> t(2, 2, 2);
        t.fill(0);
        Tensor<double> probs({4, 2, 2, 2}, 0.0);
        for (std::size_t i = 0; i < 8; ++i) probs[i] = 1.0;  // all mass on class 0
        REQUIRE(dice_loss(probs, t) == 0.0);
    }
}

TEST_CASE("attention loss worked example and reductions", "[losses]") {
    SECTION("one voxel, 2 classes, unit weights, p_true 0.6 scores 0.32") {
        const auto probs = one_voxel_probs(0.6, 2, 0);
        const auto t = one_voxel_target(0);
        const auto w = unit_weights(2);
        REQUIRE(attention_loss(probs, t, w) == Catch::Approx(0.32).epsilon(1e-12));
    }
    SECTION("one-hot correct prediction scores exactly 0") {
        Rng rng(5);
        const auto t = oracle::random_target(rng, 4, 3, 3, 3);
        Tensor<double> probs({4, 3, 3, 3}, 0.0);
        for (std::size_t i = 0; i < t.size(); ++i) probs[t[i] * t.size() + i] = 1.0;
        const auto w = oracle::random_weights(rng, 4, 3, 3, 3);
        REQUIRE(attention_loss(probs, t, w) == 0.0);
    }
    SECTION("reduction: mean over voxels, sum over classes") {
        // two voxels with identical per-voxel contributions -> same value as
        // one voxel; doubling the class count by duplicating planes doubles it
        const auto t1 = one_voxel_target(0);
        const auto p1 = one_voxel_probs(0.6, 2, 0);
        const auto w1 = unit_weights(2);
        const double single = attention_loss(p1, t1, w1);

        Grid3<std::uint8_t> t2(2, 1, 1);
        t2.fill(0);
        Tensor<double> p2({2, 2, 1, 1});
        p2[0] = p2[1] = 0.6;
        p2[2] = p2[3] = 0.4;
        Tensor<double> w2({2, 2, 1, 1}, 1.0);
        REQUIRE(attention_loss(p2, t2, w2) == Catch::Approx(single).epsilon(1e-12));

        Tensor<double> p4({4, 1, 1, 1});
        p4[0] = 0.6;
        p4[1] = 0.4;
        p4[2] = 0.6;  // duplicate plane pair: wrong-class mass 0.6 and 0.4
        p4[3] = 0.4;
        const auto w4 = unit_weights(4);
        const auto t4 = one_voxel_target(0);
        // extra planes add 0.6^2 + 0.4^2 = 0.52
        REQUIRE(attention_loss(p4, t4, w4) == Catch::Approx(single + 0.52).epsilon(1e-12));
    }
    SECTION("zero weights silence the loss") {
        Rng rng(6);
        const auto probs = oracle::random_probs(rng, 4, 2, 2, 2);
        const auto t = oracle::random_target(rng, 4, 2, 2, 2);
        Tensor<double> w({4, 2, 2, 2}, 0.0);
        REQUIRE(attention_loss(probs, t, w) == 0.0);
    }
    SECTION("negative weights are rejected") {
        const auto probs = one_voxel_probs(0.5, 2, 0);
        const auto t = one_voxel_target(0);
        Tensor<double> w({2, 1, 1, 1}, -1.0);
        REQUIRE_THROWS_AS(attention_loss(probs, t, w), ValidationError);
    }
}

TEST_CASE("true-class attention derivative is -2W(1-P)", "[losses]") {
    // unit weight first, then a weighted sweep; tight 1e-9 agreement
    for (int k = 1; k <= 9; ++k) {
        const double p = k / 10.0;
        const auto probs = one_voxel_probs(p, 2, 0);
        const auto t = one_voxel_target(0);
        Tensor<double> dprobs(probs.shape());

        attention_grad(probs, t, unit_weights(2), dprobs);
        REQUIRE(std::abs(dprobs[0] - (-2.0 * (1.0 - p))) < 1e-9);

        for (double w_val : {0.25, 0.5, 0.8}) {
            Tensor<double> w({2, 1, 1, 1}, w_val);
            attention_grad(probs, t, w, dprobs);
            REQUIRE(std::abs(dprobs[0] - (-2.0 * w_val * (1.0 - p))) < 1e-9);
            // off-class term is the mirror image +2WP
            REQUIRE(std::abs(dprobs[1] - 2.0 * w_val * probs[1]) < 1e-9);
        }
    }
}

TEST_CASE("combined loss is attention plus lambda times dice", "[losses]") {
    Rng rng(7);
    const auto probs = oracle::random_probs(rng, 4, 3, 2, 4);
    const auto t = oracle::random_target(rng, 4, 3, 2, 4);
    const auto w = oracle::random_weights(rng, 4, 3, 2, 4);

    for (double lam : {0.0, 0.5, 1.0, 2.5}) {
        const LossValue<double> lv = combined_loss(probs, t, w, lam);
        REQUIRE(lv.has_terms);
        REQUIRE(lv.attention == Catch::Approx(attention_loss(probs, t, w)).margin(1e-9));
        REQUIRE(lv.dice == Catch::Approx(dice_loss(probs, t)).margin(1e-9));
        REQUIRE(lv.total ==
                Catch::Approx(lv.attention + lam * lv.dice).margin(1e-9));
    }

    SECTION("perfect prediction zeroes every term") {
        Tensor<double> hot({4, 3, 2, 4}, 0.0);
        for (std::size_t i = 0; i < t.size(); ++i) hot[t[i] * t.size() + i] = 1.0;
        const LossValue<double> lv = combined_loss(hot, t, w, 1.0);
        REQUIRE(lv.attention == 0.0);
        REQUIRE(lv.dice == Catch::Approx(0.0).margin(1e-4));
    }
}

TEST_CASE("all loss gradients pass central finite differences", "[losses][grad]") {
    // double precision, 4-class 4x4x4 instances; the acceptance runner
    // repeats this over more seeds
    Rng rng(100);
    for (int seed = 0; seed < 5; ++seed) {
        auto probs = oracle::random_probs(rng, 4, 4, 4, 4);
        const auto t = oracle::random_target(rng, 4, 4, 4, 4);
        const auto w = oracle::random_weights(rng, 4, 4, 4, 4);
        Tensor<double> analytic(probs.shape());

        INFO("seed block " << seed);

        cross_entropy_grad(probs, t, analytic);
        REQUIRE(oracle::max_fd_rel_err([&] { return double(cross_entropy_loss(probs, t)); },
                                       probs, analytic) < 1e-4);

        FocalParams fp;
        fp.gamma = 2.0;
        fp.alpha = {0.5, 1.0, 1.5, 2.0};
        focal_grad(probs, t, analytic, fp);
        REQUIRE(oracle::max_fd_rel_err([&] { return double(focal_loss(probs, t, fp)); },
                                       probs, analytic) < 1e-4);

        dice_grad(probs, t, analytic);
        REQUIRE(oracle::max_fd_rel_err([&] { return double(dice_loss(probs, t)); }, probs,
                                       analytic) < 1e-4);

        attention_grad(probs, t, w, analytic);
        REQUIRE(oracle::max_fd_rel_err([&] { return double(attention_loss(probs, t, w)); },
                                       probs, analytic) < 1e-4);

        combined_grad(probs, t, w, analytic, 1.5);
        REQUIRE(oracle::max_fd_rel_err(
                    [&] { return double(combined_loss(probs, t, w, 1.5).total); }, probs,
                    analytic) < 1e-4);
    }
}

TEST_CASE("softmax backward matches finite differences through the chain",
          "[losses][grad]") {
    Rng rng(200);
    Tensor<double> logits({4, 3, 3, 3});
    for (std::size_t i = 0; i < logits.numel(); ++i) logits[i] = rng.normal();
    const auto t = oracle::random_target(rng, 4, 3, 3, 3);
    const auto w = oracle::random_weights(rng, 4, 3, 3, 3);

    // d/dlogits of combined_loss(softmax(logits))
    auto loss_of_logits = [&] {
        return double(combined_loss(softmax_classes(logits), t, w, 1.0).total);
    };
    const auto probs = softmax_classes(logits);
    Tensor<double> dprobs(probs.shape());
    combined_grad(probs, t, w, dprobs, 1.0);
    const auto dlogits = softmax_classes_backward(probs, dprobs);

    REQUIRE(oracle::max_fd_rel_err(loss_of_logits, logits, dlogits) < 1e-4);
}

TEST_CASE("losses are finite and nonnegative on random inputs", "[losses]") {
    Rng rng(300);
    for (int trial = 0; trial < 20; ++trial) {
        const auto probs = oracle::random_probs(rng, 4, 3, 3, 3);
        const auto t = oracle::random_target(rng, 4, 3, 3, 3);
        const auto w = oracle::random_weights(rng, 4, 3, 3, 3);
        for (double v : {double(cross_entropy_loss(probs, t)),
                         double(focal_loss(probs, t)),
                         double(dice_loss(probs, t)),
                         double(attention_loss(probs, t, w)),
                         double(combined_loss(probs, t, w, 1.0).total)}) {
            REQUIRE(std::isfinite(v));
            REQUIRE(v >= 0.0);
        }
    }
}

// Core data structures and plumbing: tensors, grids, RNG determinism, volume
// and subject file round-trips, config parsing, phantom generation, patch
// sampling, and the learning-rate schedule.

#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>

#include "support/oracles.hpp"
#include "voxseg/config.hpp"
#include "voxseg/io.hpp"
#include "voxseg/phantom.hpp"
#include "voxseg/schedule.hpp"
#include "voxseg/subject.hpp"

using namespace voxseg;
namespace fs = std::filesystem;

TEST_CASE("tensor shape bookkeeping and indexing", "[tensor]") {
    Tensor<float> t({2, 3, 4});
    REQUIRE(t.rank() == 3);
    REQUIRE(t.numel() == 24);
    t.fill(1.5f);
    REQUIRE(t[23] == 1.5f);

    Tensor<double> u({2, 3, 4, 5});
    u.at4(1, 2, 3, 4) = 7.0;
    REQUIRE(u[u.numel() - 1] == 7.0);
    REQUIRE(u.idx4(0, 0, 0, 1) == 1);
    REQUIRE(u.idx4(1, 0, 0, 0) == 60);

    REQUIRE(t.shape_string() == "(2,3,4)");
    REQUIRE(t.all_finite());
    t[0] = std::numeric_limits<float>::infinity();
    REQUIRE_FALSE(t.all_finite());

    Tensor<float> a({2, 2}), b({4});
    REQUIRE_THROWS_AS(require_same_shape(a, b, "test"), ShapeError);
}

TEST_CASE("tensor cast preserves values", "[tensor]") {
    Tensor<double> d({3});
    d[0] = 0.25;
    d[1] = -2.0;
    d[2] = 9.0;
    const auto f = d.cast<float>();
    REQUIRE(f[0] == 0.25f);
    REQUIRE(f[1] == -2.0f);
    REQUIRE(f[2] == 9.0f);
}

TEST_CASE("grid linear order is x-major, z-fastest", "[grid]") {
    Grid3<int> g(2, 3, 4);
    int v = 0;
    for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 3; ++y)
            for (int z = 0; z < 4; ++z) g.at(x, y, z) = v++;
    for (std::size_t i = 0; i < g.size(); ++i) REQUIRE(g[i] == static_cast<int>(i));
    REQUIRE(g.in_bounds(1, 2, 3));
    REQUIRE_FALSE(g.in_bounds(2, 0, 0));
    REQUIRE_FALSE(g.in_bounds(0, -1, 0));
    REQUIRE(g.dims_string() == "2x3x4");
}

TEST_CASE("label volume rejects out-of-range ids", "[grid]") {
    LabelVolume lv(2, 2, 2, 4);
    lv.ids.fill(3);
    REQUIRE_NOTHROW(lv.validate_ids());
    lv.ids[5] = 4;
    REQUIRE_THROWS_AS(lv.validate_ids(), ValidationError);
    lv.ids[5] = 1;
    REQUIRE(lv.class_present(1));
    REQUIRE_FALSE(lv.class_present(2));
}

TEST_CASE("rng streams are deterministic and distinct per seed", "[rng]") {
    Rng a(12), b(12), c(13);
    bool any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const double va = a.uniform();
        REQUIRE(va == b.uniform());
        REQUIRE(va >= 0.0);
        REQUIRE(va < 1.0);
        if (va != c.uniform()) any_diff = true;
    }
    REQUIRE(any_diff);

    Rng d(99), e(99);
    for (int i = 0; i < 100; ++i) REQUIRE(d.normal() == e.normal());
    for (int i = 0; i < 1000; ++i) {
        const auto k = d.uniform_int(-3, 5);
        REQUIRE(k >= -3);
        REQUIRE(k <= 5);
    }
}

TEST_CASE("normal samples have roughly standard moments", "[rng]") {
    Rng rng(7);
    const int n = 20000;
    double sum = 0.0, sum_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sum_sq += x * x;
    }
    const double mean = sum / n;
    const double var = sum_sq / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.03);
    REQUIRE(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("f32 volume round-trips through disk", "[io]") {
    oracle::TempDir dir("voxseg-io");
    Volume v(3, 4, 5, {0.5, 1.0, 2.0});
    Rng rng(3);
    for (auto& x : v.raw()) x = static_cast<float>(rng.normal());

    const auto path = dir / "vol.raw";
    save_volume_f32(path, v);
    REQUIRE(fs::exists(dir / "vol.hdr.txt"));
    const Volume back = load_volume_f32(path);
    REQUIRE(back.same_dims(v));
    REQUIRE(back.spacing() == v.spacing());
    for (std::size_t i = 0; i < v.size(); ++i) REQUIRE(back[i] == v[i]);
}

TEST_CASE("u8 label volume round-trips through disk", "[io]") {
    oracle::TempDir dir("voxseg-io");
    LabelVolume lv(4, 3, 2, 4);
    Rng rng(4);
    for (auto& x : lv.ids.raw()) x = static_cast<std::uint8_t>(rng.uniform_int(0, 3));

    const auto path = dir / "label.raw";
    save_label_volume(path, lv);
    const LabelVolume back = load_label_volume(path);
    REQUIRE(back.ids.same_dims(lv.ids));
    for (std::size_t i = 0; i < lv.ids.size(); ++i) REQUIRE(back.ids[i] == lv.ids[i]);
}

TEST_CASE("payload byte order is x-fastest", "[io]") {
    oracle::TempDir dir("voxseg-io");
    Volume v(2, 2, 2);
    // distinct value per voxel; file order must be x, then y, then z
    for (int x = 0; x < 2; ++x)
        for (int y = 0; y < 2; ++y)
            for (int z = 0; z < 2; ++z)
                v.at(x, y, z) = static_cast<float>(x + 10 * y + 100 * z);
    save_volume_f32(dir / "v.raw", v);

    std::ifstream in(dir / "v.raw", std::ios::binary);
    float flat[8];
    in.read(reinterpret_cast<char*>(flat), sizeof(flat));
    REQUIRE(in.gcount() == sizeof(flat));
    const float expect[8] = {0, 1, 10, 11, 100, 101, 110, 111};
    for (int i = 0; i < 8; ++i) REQUIRE(flat[i] == expect[i]);
}

TEST_CASE("header errors are specific", "[io]") {
    oracle::TempDir dir("voxseg-io");
    auto write = [&](const std::string& text) {
        std::ofstream out(dir / "h.hdr.txt", std::ios::trunc);
        out << text;
    };

    write("dims=2 2 2\ndtype=f16\n");
    REQUIRE_THROWS_WITH(read_header(dir / "h.hdr.txt"),
                        Catch::Matchers::ContainsSubstring("unknown dtype"));
    write("dims=2 2 2\n");
    REQUIRE_THROWS_WITH(read_header(dir / "h.hdr.txt"),
                        Catch::Matchers::ContainsSubstring("missing dims or dtype"));
    write("dims=2 2 2\ndtype=f32\ncolor=red\n");
    REQUIRE_THROWS_WITH(read_header(dir / "h.hdr.txt"),
                        Catch::Matchers::ContainsSubstring("unknown header key"));
    REQUIRE_THROWS_AS(read_header(dir / "absent.hdr.txt"), IoError);
}

TEST_CASE("short payload is rejected", "[io]") {
    oracle::TempDir dir("voxseg-io");
    Volume v(4, 4, 4);
    save_volume_f32(dir / "v.raw", v);
    fs::resize_file(dir / "v.raw", 100);  // 256 bytes expected
    REQUIRE_THROWS_WITH(load_volume_f32(dir / "v.raw"),
                        Catch::Matchers::ContainsSubstring("shorter than dims imply"));
}

TEST_CASE("pgm slice export writes a valid scaled P5 image", "[io]") {
    oracle::TempDir dir("voxseg-io");
    Grid3<float> g(3, 4, 5);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(i);

    const auto path = dir / "slice.pgm";
    export_slice_pgm(path, g, 2, 1);
    std::ifstream in(path, std::ios::binary);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    in >> magic >> w >> h >> maxval;
    REQUIRE(magic == "P5");
    REQUIRE(w == 3);   // u axis = x
    REQUIRE(h == 4);   // v axis = y
    REQUIRE(maxval == 255);
    in.get();  // single whitespace after header
    std::vector<unsigned char> bytes(12);
    in.read(reinterpret_cast<char*>(bytes.data()), 12);
    REQUIRE(in.gcount() == 12);
    // values on the slice span [1 .. 56]; min-max scaling puts the extremes
    // at exactly 0 and 255
    const auto [lo, hi] = std::minmax_element(bytes.begin(), bytes.end());
    REQUIRE(*lo == 0);
    REQUIRE(*hi == 255);

    REQUIRE_THROWS_AS(export_slice_pgm(dir / "bad.pgm", g, 3, 0), ValidationError);
    REQUIRE_THROWS_AS(export_slice_pgm(dir / "bad.pgm", g, 2, 5), ValidationError);
}

TEST_CASE("subject directory round-trips", "[io][subject]") {
    oracle::TempDir dir("voxseg-subj");
    const SubjectRecord s = generate_phantom(PhantomSpec{{32, 32, 32}, {13, 9, 5}}, 11);
    save_subject(dir / "p11", s);
    const SubjectRecord back = load_subject(dir / "p11");
    REQUIRE(back.id == "p11");  // id comes from the directory name
    REQUIRE(back.modalities.size() == 2);
    REQUIRE(back.labels.has_value());
    for (int m = 0; m < 2; ++m)
        for (std::size_t i = 0; i < s.modalities[m].size(); ++i)
            REQUIRE(back.modalities[m][i] == s.modalities[m][i]);
    for (std::size_t i = 0; i < s.labels->ids.size(); ++i)
        REQUIRE(back.labels->ids[i] == s.labels->ids[i]);

    SECTION("missing modality is reported by name") {
        fs::remove(dir / "p11" / "T2.raw");
        REQUIRE_THROWS_WITH(load_subject(dir / "p11"),
                            Catch::Matchers::ContainsSubstring("modality T2 absent"));
    }
    SECTION("label dim mismatch is reported with both sizes") {
        LabelVolume small(16, 16, 16, 4);
        save_label_volume(dir / "p11" / "label.raw", small);
        REQUIRE_THROWS_WITH(load_subject(dir / "p11"),
                            Catch::Matchers::ContainsSubstring("16x16x16"));
    }
    SECTION("absent directory is an io error") {
        REQUIRE_THROWS_AS(load_subject(dir / "nope"), IoError);
    }
}

TEST_CASE("intensity normalization is a nonzero-voxel z-score", "[subject]") {
    Volume v(4, 4, 4);
    Rng rng(5);
    for (auto& x : v.raw()) x = static_cast<float>(2.0 + rng.normal());
    v[0] = 0.0f;  // background voxel must stay zero

    const Volume n = normalize_intensity(v);
    REQUIRE(n[0] == 0.0f);
    double sum = 0.0, sum_sq = 0.0;
    std::size_t cnt = 0;
    for (float x : n.raw()) {
        if (x == 0.0f) continue;
        sum += x;
        sum_sq += static_cast<double>(x) * x;
        ++cnt;
    }
    REQUIRE(cnt == v.size() - 1);
    REQUIRE(std::abs(sum / cnt) < 1e-5);
    REQUIRE(std::abs(sum_sq / cnt - 1.0) < 1e-4);

    SECTION("all-zero volume raises the warning flag") {
        Volume z(2, 2, 2);
        z.fill(0.0f);
        bool warn = false;
        const Volume out = normalize_intensity(z, &warn);
        REQUIRE(warn);
        for (float x : out.raw()) REQUIRE(x == 0.0f);
    }
    SECTION("constant volume maps to zeros without dividing by zero") {
        Volume c(2, 2, 2);
        c.fill(3.0f);
        const Volume out = normalize_intensity(c);
        for (float x : out.raw()) REQUIRE(x == 0.0f);
    }
}

TEST_CASE("phantom generation is deterministic and structured", "[phantom]") {
    PhantomSpec spec;
    spec.dims = {32, 32, 32};
    spec.class_radii = {13.0, 9.0, 5.0};
    const SubjectRecord a = generate_phantom(spec, 21);
    const SubjectRecord b = generate_phantom(spec, 21);
    const SubjectRecord c = generate_phantom(spec, 22);

    REQUIRE(a.id == "phantom-21");
    for (int m = 0; m < 2; ++m)
        for (std::size_t i = 0; i < a.modalities[m].size(); ++i)
            REQUIRE(a.modalities[m][i] == b.modalities[m][i]);
    bool differs = false;
    for (std::size_t i = 0; i < a.modalities[0].size() && !differs; ++i)
        differs = a.modalities[0][i] != c.modalities[0][i];
    REQUIRE(differs);

    // labels: all four classes present, nested by radius
    for (int cls = 0; cls < 4; ++cls) REQUIRE(a.labels->class_present(cls));
    const auto& ids = a.labels->ids;
    REQUIRE(ids.at(16, 16, 16) == 3);  // innermost class at the center
    REQUIRE(ids.at(0, 0, 0) == 0);     // corner is background

    SECTION("modalities have opposite contrast ordering") {
        // mean intensity per class, modality 0 ascends, modality 1 descends
        for (int m = 0; m < 2; ++m) {
            std::array<double, 4> mean{};
            std::array<std::size_t, 4> count{};
            for (int x = 0; x < 32; ++x)
                for (int y = 0; y < 32; ++y)
                    for (int z = 0; z < 32; ++z) {
                        mean[ids.at(x, y, z)] += a.modalities[m].at(x, y, z);
                        ++count[ids.at(x, y, z)];
                    }
            for (int cls = 0; cls < 4; ++cls) mean[cls] /= double(count[cls]);
            for (int cls = 0; cls < 3; ++cls) {
                if (m == 0)
                    REQUIRE(mean[cls] < mean[cls + 1]);
                else
                    REQUIRE(mean[cls] > mean[cls + 1]);
            }
        }
    }
    SECTION("malformed shape parameters are rejected") {
        PhantomSpec bad = spec;
        bad.class_radii = {9.0, 13.0, 5.0};  // not decreasing
        REQUIRE_THROWS_AS(generate_phantom(bad, 1), ValidationError);
        bad = spec;
        bad.class_radii = {17.0, 9.0, 5.0};  // exceeds half extent 16
        REQUIRE_THROWS_AS(generate_phantom(bad, 1), ValidationError);
        bad = spec;
        bad.noise_sigma = -0.1;
        REQUIRE_THROWS_AS(generate_phantom(bad, 1), ValidationError);
    }
    SECTION("warp amplitude changes boundaries but keeps labels valid") {
        PhantomSpec warped = spec;
        warped.warp_amplitude = 2.0;
        const SubjectRecord w = generate_phantom(warped, 21);
        REQUIRE_NOTHROW(w.labels->validate_ids());
        bool moved = false;
        for (std::size_t i = 0; i < ids.size() && !moved; ++i)
            moved = w.labels->ids[i] != ids[i];
        REQUIRE(moved);
    }
}

TEST_CASE("patch sampling stays in bounds and is reproducible", "[subject]") {
    SubjectRecord s = generate_phantom(PhantomSpec{{24, 28, 32}, {9.0, 6.0, 3.0}}, 31);
    s.weight_maps = compute_all_weight_maps(*s.labels);

    Rng rng(77);
    for (int i = 0; i < 25; ++i) {
        const auto p = sample_patch<float>(s, {16, 16, 16}, rng);
        REQUIRE(p.input.shape() == std::vector<std::size_t>{2, 16, 16, 16});
        REQUIRE(p.weights.shape() == std::vector<std::size_t>{4, 16, 16, 16});
        for (int a = 0; a < 3; ++a) {
            REQUIRE(p.origin[a] >= 0);
            REQUIRE(p.origin[a] + 16 <= s.dims()[a]);
        }
        // crop content matches the source volume at the reported origin
        REQUIRE(p.input.at4(0, 3, 4, 5) ==
                s.modalities[0].at(p.origin[0] + 3, p.origin[1] + 4, p.origin[2] + 5));
        REQUIRE(p.target.at(1, 2, 3) ==
                s.labels->ids.at(p.origin[0] + 1, p.origin[1] + 2, p.origin[2] + 3));

        // foreground bias: patch must contain at least one non-background voxel
        bool fg = false;
        for (auto v : p.target.raw()) fg |= v != 0;
        REQUIRE(fg);
    }

    Rng r1(5), r2(5);
    const auto p1 = sample_patch<float>(s, {16, 16, 16}, r1);
    const auto p2 = sample_patch<float>(s, {16, 16, 16}, r2);
    REQUIRE(p1.origin == p2.origin);

    SECTION("oversized patch and missing maps are rejected") {
        Rng r(1);
        REQUIRE_THROWS_AS(sample_patch<float>(s, {64, 16, 16}, r), ValidationError);
        SubjectRecord bare = generate_phantom(PhantomSpec{{24, 24, 24}, {9.0, 6.0, 3.0}}, 1);
        REQUIRE_THROWS_WITH(sample_patch<float>(bare, {16, 16, 16}, r),
                            Catch::Matchers::ContainsSubstring("needs weight maps"));
        bare.labels.reset();
        REQUIRE_THROWS_WITH(sample_patch<float>(bare, {16, 16, 16}, r),
                            Catch::Matchers::ContainsSubstring("needs labels"));
    }
    SECTION("inference-mode sampling needs no labels") {
        SubjectRecord bare = generate_phantom(PhantomSpec{{24, 24, 24}, {9.0, 6.0, 3.0}}, 1);
        bare.labels.reset();
        PatchOptions opt;
        opt.training = false;
        opt.foreground_bias = false;
        Rng r(1);
        const auto p = sample_patch<float>(bare, {16, 16, 16}, r, opt);
        REQUIRE(p.input.numel() == 2u * 16 * 16 * 16);
        REQUIRE(p.weights.numel() == 0);
    }
}

TEST_CASE("config text parses, validates, and round-trips", "[config]") {
    const std::string text =
        "# training setup\n"
        "batch_size = 2\n"
        "patch_size = 16\n"
        "encoder_channels = 8,8,16,16,16\n"
        "num_periods = 1\n"
        "period_length = 4\n"
        "decay_every = 2\n"
        "steps_per_epoch = 3\n"
        "loss_mode = dice\n"
        "gated_skips = false\n"
        "seed = 9\n";
    const RunConfig rc = parse_run_config(text);
    REQUIRE(rc.train.batch_size == 2);
    REQUIRE(rc.train.patch_size == 16);
    REQUIRE(rc.train.loss_mode == LossMode::dice_only);
    REQUIRE(rc.train.seed == 9);
    REQUIRE(rc.net.encoder_channels == std::array<int, 5>{8, 8, 16, 16, 16});
    REQUIRE_FALSE(rc.net.gated_skips);

    // serialize -> parse -> serialize is a fixed point
    const std::string ser = serialize_run_config(rc);
    const RunConfig rc2 = parse_run_config(ser);
    REQUIRE(serialize_run_config(rc2) == ser);

    SECTION("defaults describe the full-scale training schedule") {
        const RunConfig d = parse_run_config(std::string{});
        REQUIRE(d.train.batch_size == 8);
        REQUIRE(d.train.patch_size == 32);
        REQUIRE(d.train.base_lr == 0.01);
        REQUIRE(d.train.lr_decay_factor == 10.0);
        REQUIRE(d.train.decay_every == 40);
        REQUIRE(d.train.period_length == 200);
        REQUIRE(d.train.num_periods == 50);
        REQUIRE(d.train.momentum == 0.9);
        REQUIRE(d.train.lambda_dice == 1.0);
        REQUIRE(d.net.encoder_channels == std::array<int, 5>{32, 64, 128, 256, 256});
        REQUIRE(d.net.atrous_rates == std::vector<int>{1, 2, 3, 4});
        REQUIRE(d.net.ca_reduction == 4);
        REQUIRE(d.net.gated_skips);
    }
    SECTION("bad keys and values are specific errors") {
        REQUIRE_THROWS_WITH(parse_run_config(std::string{"turbo = yes\n"}),
                            Catch::Matchers::ContainsSubstring("unknown key"));
        REQUIRE_THROWS_WITH(parse_run_config(std::string{"batch_size = many\n"}),
                            Catch::Matchers::ContainsSubstring("batch_size"));
        REQUIRE_THROWS_WITH(parse_run_config(std::string{"encoder_channels = 8,8\n"}),
                            Catch::Matchers::ContainsSubstring("encoder_channels"));
        REQUIRE_THROWS_WITH(parse_run_config(std::string{"loss_mode = focal\n"}),
                            Catch::Matchers::ContainsSubstring("loss_mode"));
        REQUIRE_THROWS_WITH(parse_run_config(std::string{"batch_size\n"}),
                            Catch::Matchers::ContainsSubstring("line 1"));
    }
    SECTION("cross-field invariants are enforced") {
        REQUIRE_THROWS_AS(parse_run_config(std::string{"decay_every = 3\n"}), ConfigError);
        REQUIRE_THROWS_AS(parse_run_config(std::string{"patch_size = 20\n"}), ConfigError);
        REQUIRE_THROWS_AS(parse_run_config(std::string{"momentum = 1.0\n"}), ConfigError);
        REQUIRE_THROWS_AS(parse_run_config(std::string{"sa_kernel = 4\n"}), ConfigError);
    }
}

TEST_CASE("learning rate follows the warm-restart step schedule", "[schedule]") {
    TrainConfig cfg;  // base 0.01, /10 every 40 epochs, 200-epoch periods

    // spot values derived from the stated rule
    REQUIRE(warm_restart_lr(0, cfg) == 0.01);
    REQUIRE(warm_restart_lr(39, cfg) == 0.01);
    REQUIRE(warm_restart_lr(40, cfg) == Catch::Approx(0.001).epsilon(1e-12));
    REQUIRE(warm_restart_lr(199, cfg) == Catch::Approx(1e-6).epsilon(1e-9));
    REQUIRE(warm_restart_lr(200, cfg) == 0.01);  // restart to maximum
    REQUIRE(warm_restart_lr(240, cfg) == Catch::Approx(0.001).epsilon(1e-12));

    SECTION("values stay in the five-step ladder and repeat every period") {
        const std::set<double> ladder{0.01, 0.001, 1e-4, 1e-5, 1e-6};
        for (int e = 0; e < 1000; ++e) {
            const double lr = warm_restart_lr(e, cfg);
            bool in_ladder = false;
            for (double l : ladder) in_ladder |= std::abs(lr - l) < 1e-15;
            REQUIRE(in_ladder);
            REQUIRE(warm_restart_lr(e + cfg.period_length, cfg) == lr);
        }
    }
    SECTION("negative epoch is rejected") {
        REQUIRE_THROWS_AS(warm_restart_lr(-1, cfg), ValidationError);
    }
    SECTION("config invariants") {
        TrainConfig bad;
        bad.decay_every = 7;  // does not divide 200
        REQUIRE_THROWS_AS(bad.validate(), ConfigError);
        bad = TrainConfig{};
        bad.batch_size = 0;
        REQUIRE_THROWS_AS(bad.validate(), ConfigError);
        bad = TrainConfig{};
        bad.patch_size = 24;  // not a multiple of 16
        REQUIRE_THROWS_AS(bad.validate(), ConfigError);
        REQUIRE(TrainConfig{}.total_epochs() == 50 * 200);
    }
}

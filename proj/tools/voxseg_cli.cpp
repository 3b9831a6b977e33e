// voxseg command-line frontend: phantom generation, weight-map export,
// training, sliding-window prediction, evaluation, and loss-gradient analysis.
//
// Exit codes: 0 success, 1 runtime failure (single-line "error: ..." on
// stderr), 2 bad usage (message plus usage text on stderr).

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "voxseg/voxseg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw voxseg::IoError("cannot open " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

voxseg::Connectivity connectivity_from_int(int c) {
    if (c == 6) return voxseg::Connectivity::six;
    if (c == 26) return voxseg::Connectivity::twenty_six;
    throw voxseg::ConfigError("--connectivity must be 6 or 26, got " + std::to_string(c));
}

// Accepts either a label .raw file or a subject directory holding label.raw.
// A label argument may be a .raw file, a subject directory (label.raw), or a
// prediction directory (prediction.raw).
fs::path resolve_label_path(const fs::path& p) {
    if (!fs::is_directory(p)) return p;
    if (fs::exists(p / "label.raw")) return p / "label.raw";
    if (fs::exists(p / "prediction.raw")) return p / "prediction.raw";
    throw voxseg::IoError("directory " + p.string() +
                          " has neither label.raw nor prediction.raw");
}

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), format, v);
    return buf;
}

// ---------------------------------------------------------------------------
// gen-phantom

struct GenPhantomArgs {
    std::string out;
    std::uint64_t seed = 1;
    std::vector<int> dims{64, 64, 64};
    std::vector<double> radii{28.0, 20.0, 12.0};
    double contrast = 0.3;
    double noise = 0.05;
    double warp = 0.0;
    std::string id;
};

void run_gen_phantom(const GenPhantomArgs& a) {
    voxseg::PhantomSpec spec;
    spec.dims = {a.dims[0], a.dims[1], a.dims[2]};
    spec.class_radii = a.radii;
    spec.contrast_gap = a.contrast;
    spec.noise_sigma = a.noise;
    spec.warp_amplitude = a.warp;

    const voxseg::SubjectRecord subject = voxseg::generate_phantom(spec, a.seed, a.id);
    voxseg::save_subject(a.out, subject);
    std::cout << "subject " << subject.id << ": dims " << subject.modalities[0].dims_string()
              << ", " << subject.labels->num_classes << " classes, seed " << a.seed << "\n";
    std::cout << "wrote " << a.out << "\n";
}

// ---------------------------------------------------------------------------
// weights

struct WeightsArgs {
    std::string subject;
    std::string out;
    int connectivity = 6;
    bool use_spacing = false;
    bool slices = false;
};

void run_weights(const WeightsArgs& a) {
    const voxseg::SubjectRecord s = voxseg::load_subject(a.subject);
    if (!s.labels)
        throw voxseg::ValidationError("subject " + s.id +
                                      " has no labels; cannot compute weight maps");

    const auto set = voxseg::compute_all_weight_maps(*s.labels, connectivity_from_int(a.connectivity),
                                                     a.use_spacing);
    for (const auto& w : set.warnings) std::cerr << "warning: " << w << "\n";

    fs::create_directories(a.out);
    for (std::size_t c = 0; c < set.maps.size(); ++c) {
        const fs::path raw = fs::path(a.out) / ("weight_c" + std::to_string(c) + ".raw");
        voxseg::save_weight_map(raw, set.maps[c]);
        std::cout << "class " << c << " (" << voxseg::tissue_name(static_cast<int>(c))
                  << "): " << (set.class_present[c] ? "present" : "absent, zero map") << " -> "
                  << raw.string() << "\n";
        if (a.slices) {
            const auto& map = set.maps[c];
            const int mid[3] = {map.nx() / 2, map.ny() / 2, map.nz() / 2};
            for (int axis = 0; axis < 3; ++axis) {
                const fs::path pgm = fs::path(a.out) / ("weight_c" + std::to_string(c) +
                                                        "_axis" + std::to_string(axis) + ".pgm");
                voxseg::export_slice_pgm(pgm, map, axis, mid[axis]);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
    std::string config;
    std::string data;
    std::vector<std::string> subjects;
    std::string out;
    std::string resume;
    std::vector<std::string> sets;
    bool verbose = false;
};

voxseg::RunConfig assemble_config(const std::string& base_text,
                                  const std::vector<std::string>& sets) {
    voxseg::ConfigMap map = voxseg::parse_config_text(base_text);
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw voxseg::ConfigError("--set expects key=value, got '" + kv + "'");
        map[voxseg::detail::trim(kv.substr(0, eq))] = voxseg::detail::trim(kv.substr(eq + 1));
    }
    return voxseg::parse_run_config(map);
}

std::vector<voxseg::SubjectRecord> gather_training_subjects(const TrainArgs& a) {
    std::vector<fs::path> dirs;
    if (!a.data.empty()) {
        if (!fs::is_directory(a.data))
            throw voxseg::IoError("data directory " + a.data + " absent");
        for (const auto& entry : fs::directory_iterator(a.data))
            if (entry.is_directory() && fs::exists(entry.path() / "T1.raw"))
                dirs.push_back(entry.path());
        std::sort(dirs.begin(), dirs.end());  // deterministic subject order
    }
    for (const auto& s : a.subjects) dirs.emplace_back(s);
    if (dirs.empty())
        throw voxseg::ValidationError("no training subjects: pass --data and/or --subject");

    std::vector<voxseg::SubjectRecord> subjects;
    subjects.reserve(dirs.size());
    for (const auto& d : dirs)
        subjects.push_back(voxseg::load_subject(d, voxseg::SubjectRecord::Role::train));
    return subjects;
}

void run_train(const TrainArgs& a) {
    std::string base_text;
    if (!a.resume.empty())
        base_text = voxseg::nn::load_checkpoint<float>(a.resume).config_text;
    else if (!a.config.empty())
        base_text = read_text_file(a.config);
    const voxseg::RunConfig cfg = assemble_config(base_text, a.sets);

    auto subjects = gather_training_subjects(a);
    std::cout << "training on " << subjects.size() << " subject(s), "
              << cfg.train.total_epochs() << " epochs x " << cfg.train.steps_per_epoch
              << " steps, batch " << cfg.train.batch_size << ", patch " << cfg.train.patch_size
              << ", loss " << voxseg::loss_mode_name(cfg.train.loss_mode) << "\n";

    voxseg::Trainer<float> trainer(cfg);
    if (!a.resume.empty()) {
        trainer.resume_from(a.resume);
        std::cout << "resumed from " << a.resume << " at epoch " << trainer.epoch() << ", step "
                  << trainer.global_step() << "\n";
    }
    const fs::path final_ckpt = trainer.train(subjects, a.out, /*quiet=*/!a.verbose);
    std::cout << "final checkpoint: " << final_ckpt.string() << "\n";
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
    std::string checkpoint;
    std::string subject;
    std::string out;
    int patch = 0;   // 0 -> use the checkpoint's training patch size
    int stride = 0;  // 0 -> patch / 2
    bool save_probs = false;
    bool no_normalize = false;
};

void run_predict(const PredictArgs& a) {
    const auto ckpt = voxseg::nn::load_checkpoint<float>(a.checkpoint);
    const voxseg::RunConfig cfg = voxseg::parse_run_config(ckpt.config_text);
    voxseg::nn::DilatedAttentionNet<float> net(cfg.net);
    voxseg::nn::load_checkpoint_into(net, ckpt);

    const voxseg::SubjectRecord subject =
        voxseg::load_subject(a.subject, voxseg::SubjectRecord::Role::evaluate);

    const int patch = a.patch > 0 ? a.patch : cfg.train.patch_size;
    const int stride = a.stride > 0 ? a.stride : std::max(1, patch / 2);
    std::cout << "predicting " << subject.id << " with patch " << patch << ", stride " << stride
              << "\n";

    const auto result =
        voxseg::sliding_window_predict(net, subject, patch, stride, !a.no_normalize);

    fs::create_directories(a.out);
    const fs::path label_path = fs::path(a.out) / "prediction.raw";
    voxseg::save_label_volume(label_path, result.labels);
    std::cout << "wrote " << label_path.string() << "\n";

    if (a.save_probs) {
        const auto dims = subject.dims();
        for (int c = 0; c < cfg.net.num_classes; ++c) {
            voxseg::Volume prob(dims[0], dims[1], dims[2], subject.modalities[0].spacing());
            for (int x = 0; x < dims[0]; ++x)
                for (int y = 0; y < dims[1]; ++y)
                    for (int z = 0; z < dims[2]; ++z)
                        prob.at(x, y, z) = result.probs[result.probs.idx4(
                            c, x, y, z)];
            const fs::path p = fs::path(a.out) / ("prob_c" + std::to_string(c) + ".raw");
            voxseg::save_volume_f32(p, prob);
            std::cout << "wrote " << p.string() << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
    std::string truth;
    std::string pred;
    std::string id;
    int classes = 4;
    int connectivity = 6;
    std::string csv;
    std::string json_path;
};

void run_evaluate(const EvaluateArgs& a) {
    const fs::path truth_path = resolve_label_path(a.truth);
    const fs::path pred_path = resolve_label_path(a.pred);
    const auto truth = voxseg::load_label_volume(truth_path, a.classes);
    const auto pred = voxseg::load_label_volume(pred_path, a.classes);

    std::string id = a.id;
    if (id.empty()) {
        const fs::path p = fs::path(a.truth);
        id = fs::is_directory(p) ? p.filename().string() : p.stem().string();
    }

    const auto rep =
        voxseg::evaluate_subject(truth, pred, id, connectivity_from_int(a.connectivity));
    for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";

    std::ostringstream csv;
    csv << voxseg::metrics_csv_header() << "\n";
    for (const auto& row : voxseg::metrics_csv_rows(rep)) csv << row << "\n";
    csv << rep.subject_id << ",mean," << fmt("%.6f", rep.mean_dsc) << ","
        << fmt("%.6f", rep.mean_asd_mm) << "\n";
    std::cout << csv.str();

    if (!a.csv.empty()) {
        std::ofstream out(a.csv, std::ios::trunc);
        if (!out) throw voxseg::IoError("cannot write " + a.csv);
        out << csv.str();
    }
    if (!a.json_path.empty()) {
        json j;
        j["subject"] = rep.subject_id;
        j["classes"] = json::array();
        for (const auto& m : rep.per_class) {
            j["classes"].push_back({{"class_id", m.class_id},
                                    {"name", m.name},
                                    {"dsc", m.dsc},
                                    {"asd_mm", m.asd_mm},
                                    {"present_truth", m.present_truth},
                                    {"present_pred", m.present_pred}});
        }
        j["mean_dsc"] = rep.mean_dsc;
        j["mean_asd_mm"] = rep.mean_asd_mm;  // NaN serializes as null
        j["warnings"] = rep.warnings;
        std::ofstream out(a.json_path, std::ios::trunc);
        if (!out) throw voxseg::IoError("cannot write " + a.json_path);
        out << j.dump(2) << "\n";
    }
}

// ---------------------------------------------------------------------------
// analyze-loss

struct AnalyzeLossArgs {
    std::vector<double> gammas{2.0};
    int points = 99;
    std::string csv;
};

void run_analyze_loss(const AnalyzeLossArgs& a) {
    std::cout << "gamma,crossover_p\n";
    for (double g : a.gammas) {
        const auto cross = voxseg::gradient_crossover(g);
        std::cout << fmt("%g", g) << ",";
        if (cross.exists)
            std::cout << fmt("%.10g", cross.p) << "\n";
        else
            std::cout << "none\n";
    }

    if (!a.csv.empty()) {
        const auto rows = voxseg::magnitude_table(a.gammas, a.points);
        std::ofstream out(a.csv, std::ios::trunc);
        if (!out) throw voxseg::IoError("cannot write " + a.csv);
        out << "p,ce";
        for (double g : a.gammas) out << ",focal_gamma" << fmt("%g", g);
        out << ",attention_unit_weight\n";
        for (const auto& r : rows) {
            out << fmt("%.10g", r.p) << "," << fmt("%.10g", r.ce);
            for (double f : r.focal) out << "," << fmt("%.10g", f);
            out << "," << fmt("%.10g", r.attention) << "\n";
        }
        std::cout << "wrote " << a.csv << " (" << rows.size() << " rows)\n";
    }
}

// ---------------------------------------------------------------------------
// info

void run_info(const std::string& checkpoint) {
    const auto ckpt = voxseg::nn::load_checkpoint<float>(checkpoint);
    std::size_t total = 0;
    for (const auto& p : ckpt.params) total += p.data.size();
    std::cout << "checkpoint: " << checkpoint << "\n";
    std::cout << "epoch: " << ckpt.epoch << "\n";
    std::cout << "step: " << ckpt.step << "\n";
    std::cout << "momentum buffers: " << (ckpt.has_momentum ? "yes" : "no") << "\n";
    std::cout << "tensors: " << ckpt.params.size() << "\n";
    std::cout << "parameters: " << total << "\n";
    std::cout << "config:\n";
    std::istringstream lines(ckpt.config_text);
    std::string line;
    while (std::getline(lines, line)) std::cout << "  " << line << "\n";
}

// ---------------------------------------------------------------------------
// export-slices

struct ExportSlicesArgs {
    std::string volume;
    std::string out;
    int axis = 2;
    int index = -1;  // -1 -> middle slice
    bool all = false;
};

template <typename T>
void export_axis_slices(const ExportSlicesArgs& a, const voxseg::Grid3<T>& grid) {
    fs::create_directories(a.out);
    const std::string stem = fs::path(a.volume).stem().string();
    const int extent = grid.dims()[a.axis];
    std::vector<int> indices;
    if (a.all)
        for (int i = 0; i < extent; ++i) indices.push_back(i);
    else
        indices.push_back(a.index >= 0 ? a.index : extent / 2);

    for (int i : indices) {
        char name[256];
        std::snprintf(name, sizeof(name), "%s_axis%d_%04d.pgm", stem.c_str(), a.axis, i);
        voxseg::export_slice_pgm(fs::path(a.out) / name, grid, a.axis, i);
    }
    std::cout << "wrote " << indices.size() << " slice(s) to " << a.out << "\n";
}

void run_export_slices(const ExportSlicesArgs& a) {
    const auto hdr = voxseg::read_header(voxseg::detail::sidecar_path(a.volume));
    if (hdr.dtype == "f32") {
        export_axis_slices(a, voxseg::load_volume_f32(a.volume));
    } else {
        // u8 labels: 256 admits any stored id without range complaints
        export_axis_slices(a, voxseg::load_label_volume(a.volume, 256).ids);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxseg: 3D brain-tissue segmentation with attention-guided losses"};
    app.require_subcommand(1);

    GenPhantomArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-phantom", "Generate a synthetic nested-shell subject");
    gen_cmd->add_option("--out", gen.out, "Output subject directory")->required();
    gen_cmd->add_option("--seed", gen.seed, "RNG seed (default 1)");
    gen_cmd->add_option("--dims", gen.dims, "Volume dims, three ints (default 64 64 64)")
        ->expected(3);
    gen_cmd->add_option("--radii", gen.radii,
                        "Shell radii, outermost first, one per tissue (default 28 20 12)");
    gen_cmd->add_option("--contrast", gen.contrast, "Gap between adjacent class means (0.3)");
    gen_cmd->add_option("--noise", gen.noise, "Gaussian intensity noise sigma (0.05)");
    gen_cmd->add_option("--warp", gen.warp, "Boundary warp amplitude in voxels (0)");
    gen_cmd->add_option("--id", gen.id, "Subject id (default phantom-<seed>)");

    WeightsArgs wts;
    auto* wts_cmd =
        app.add_subcommand("weights", "Compute per-class surface-distance weight maps");
    wts_cmd->add_option("--subject", wts.subject, "Subject directory with label.raw")->required();
    wts_cmd->add_option("--out", wts.out, "Output directory")->required();
    wts_cmd->add_option("--connectivity", wts.connectivity, "Surface connectivity, 6 or 26 (6)");
    wts_cmd->add_flag("--use-spacing", wts.use_spacing, "Measure distances in mm, not voxels");
    wts_cmd->add_flag("--slices", wts.slices, "Also export mid-slice PGM images per class");

    TrainArgs tr;
    auto* tr_cmd = app.add_subcommand("train", "Train the segmentation network");
    auto* tr_config = tr_cmd->add_option("--config", tr.config, "Flat key = value config file");
    tr_cmd->add_option("--data", tr.data, "Directory of subject subdirectories");
    tr_cmd->add_option("--subject", tr.subjects, "Explicit subject directory (repeatable)");
    tr_cmd->add_option("--out", tr.out, "Output directory for checkpoints and the log")
        ->required();
    tr_cmd->add_option("--resume", tr.resume, "Checkpoint to resume from (config comes from it)")
        ->excludes(tr_config);
    tr_cmd->add_option("--set", tr.sets, "Config override key=value (repeatable)");
    tr_cmd->add_flag("--verbose", tr.verbose, "Per-step loss lines on stdout");

    PredictArgs pr;
    auto* pr_cmd = app.add_subcommand("predict", "Sliding-window inference on a subject");
    pr_cmd->add_option("--checkpoint", pr.checkpoint, "Trained checkpoint")->required();
    pr_cmd->add_option("--subject", pr.subject, "Subject directory")->required();
    pr_cmd->add_option("--out", pr.out, "Output directory")->required();
    pr_cmd->add_option("--patch", pr.patch, "Window size (default: training patch size)");
    pr_cmd->add_option("--stride", pr.stride, "Window stride (default: patch / 2)");
    pr_cmd->add_flag("--save-probs", pr.save_probs, "Also write per-class probability volumes");
    pr_cmd->add_flag("--no-normalize", pr.no_normalize, "Skip intensity normalization");

    EvaluateArgs ev;
    auto* ev_cmd = app.add_subcommand("evaluate", "DSC and ASD against ground truth");
    ev_cmd->add_option("--truth", ev.truth, "Ground-truth label.raw or subject directory")
        ->required();
    ev_cmd->add_option("--pred", ev.pred, "Predicted label.raw or prediction directory")
        ->required();
    ev_cmd->add_option("--id", ev.id, "Subject id for report rows (default: from --truth)");
    ev_cmd->add_option("--classes", ev.classes, "Number of classes incl. background (4)");
    ev_cmd->add_option("--connectivity", ev.connectivity, "Surface connectivity, 6 or 26 (6)");
    ev_cmd->add_option("--csv", ev.csv, "Also write the CSV report to this file");
    ev_cmd->add_option("--json", ev.json_path, "Also write a JSON report to this file");

    AnalyzeLossArgs an;
    auto* an_cmd = app.add_subcommand(
        "analyze-loss", "Focal/CE gradient crossover points and magnitude table");
    an_cmd->add_option("--gamma", an.gammas, "Focal gamma values (default 2)");
    an_cmd->add_option("--points", an.points, "Rows in the magnitude table (99)");
    an_cmd->add_option("--csv", an.csv, "Write the gradient-magnitude table to this file");

    std::string info_ckpt;
    auto* info_cmd = app.add_subcommand("info", "Describe a checkpoint");
    info_cmd->add_option("--checkpoint", info_ckpt, "Checkpoint file")->required();

    ExportSlicesArgs ex;
    auto* ex_cmd = app.add_subcommand("export-slices", "Export PGM slices of a stored volume");
    ex_cmd->add_option("--volume", ex.volume, "A .raw volume (f32 or u8)")->required();
    ex_cmd->add_option("--out", ex.out, "Output directory")->required();
    ex_cmd->add_option("--axis", ex.axis, "Slice axis 0/1/2 (2)");
    ex_cmd->add_option("--index", ex.index, "Slice index (default: middle)");
    ex_cmd->add_flag("--all", ex.all, "Export every slice along the axis");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
        return 2;
    }

    try {
        if (gen_cmd->parsed()) run_gen_phantom(gen);
        else if (wts_cmd->parsed()) run_weights(wts);
        else if (tr_cmd->parsed()) run_train(tr);
        else if (pr_cmd->parsed()) run_predict(pr);
        else if (ev_cmd->parsed()) run_evaluate(ev);
        else if (an_cmd->parsed()) run_analyze_loss(an);
        else if (info_cmd->parsed()) run_info(info_ckpt);
        else if (ex_cmd->parsed()) run_export_slices(ex);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
    return 0;
}

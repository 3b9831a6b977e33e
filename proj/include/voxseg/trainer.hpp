#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "voxseg/config.hpp"
#include "voxseg/losses.hpp"
#include "voxseg/nn/checkpoint.hpp"
#include "voxseg/nn/network.hpp"
#include "voxseg/schedule.hpp"
#include "voxseg/subject.hpp"

// SGD training loop: warm-restart schedule, random foreground-biased patches,
// per-step CSV logging, periodic + final checkpoints with momentum so resumed
// runs continue exactly. Single-threaded and deterministic for a fixed seed.

namespace voxseg {

template <typename T = float>
class Trainer {
   public:
    struct Batch {
        Tensor<T> input;                        // (B, modalities, p, p, p)
        std::vector<Grid3<std::uint8_t>> targets;
        std::vector<Tensor<T>> weights;         // per sample: (classes, p, p, p)
    };

    explicit Trainer(const RunConfig& cfg)
        : cfg_(cfg),
          net_(cfg.net, cfg.train.seed),
          sample_rng_(cfg.train.seed + 1) {  // separate stream from weight init
        cfg_.net.validate();
        cfg_.train.validate();
        for (auto& p : net_.parameters()) momentum_.emplace_back(p.value->numel(), T(0));
    }

    nn::DilatedAttentionNet<T>& network() { return net_; }
    std::uint64_t global_step() const { return step_; }
    int epoch() const { return epoch_; }

    // Normalizes intensities, checks roles/labels, and fills in weight maps —
    // call once before training. Subjects marked for evaluation are rejected:
    // the training loop must never touch held-out labels.
    void prepare_subjects(std::vector<SubjectRecord>& subjects) const {
        if (subjects.empty()) throw ValidationError("train: no subjects given");
        for (auto& s : subjects) {
            if (s.role != SubjectRecord::Role::train)
                throw ValidationError("train: subject '" + s.id +
                                      "' is marked for evaluation; refusing to train on it");
            if (!s.labels)
                throw ValidationError("train: subject '" + s.id + "' has no labels");
            s.validate();
            if (cfg_.train.normalize)
                for (auto& m : s.modalities) m = normalize_intensity(m);
            if (!s.weight_maps) s.weight_maps = compute_all_weight_maps(*s.labels);
        }
    }

    Batch assemble_batch(const std::vector<SubjectRecord>& subjects) {
        const int p = cfg_.train.patch_size;
        const int b_n = cfg_.train.batch_size;
        PatchOptions opt;
        opt.training = true;
        opt.foreground_bias = cfg_.train.foreground_bias;

        Batch batch;
        const std::size_t mod = subjects.front().modalities.size();
        batch.input = Tensor<T>({std::size_t(b_n), mod, std::size_t(p), std::size_t(p),
                                 std::size_t(p)});
        for (int b = 0; b < b_n; ++b) {
            const std::size_t si =
                subjects.size() == 1
                    ? 0
                    : sample_rng_.uniform_int(0, static_cast<std::uint64_t>(subjects.size() - 1));
            PatchSample<T> ps = sample_patch<T>(subjects[si], {p, p, p}, sample_rng_, opt);
            std::copy_n(ps.input.data(), ps.input.numel(),
                        batch.input.data() + std::size_t(b) * ps.input.numel());
            batch.targets.push_back(std::move(ps.target));
            batch.weights.push_back(std::move(ps.weights));
        }
        return batch;
    }

    // One optimizer step on the given batch. Returns the batch-mean loss.
    LossValue<T> step_on_batch(const Batch& batch, double lr) {
        const std::size_t b_n = batch.targets.size();
        net_.zero_grad();
        Tensor<T> logits = net_.forward(batch.input);
        const std::size_t per_sample = logits.numel() / b_n;
        const std::vector<std::size_t> sample_shape{logits.dim(1), logits.dim(2), logits.dim(3),
                                                    logits.dim(4)};

        Tensor<T> dlogits(logits.shape());
        LossValue<T> mean;
        mean.has_terms = true;
        Tensor<T> sample_logits(sample_shape), dprobs(sample_shape);
        for (std::size_t b = 0; b < b_n; ++b) {
            std::copy_n(logits.data() + b * per_sample, per_sample, sample_logits.data());
            Tensor<T> probs = softmax_classes(sample_logits);
            LossValue<T> lv;
            if (cfg_.train.loss_mode == LossMode::combined) {
                lv = combined_loss(probs, batch.targets[b], batch.weights[b],
                                   cfg_.train.lambda_dice);
                combined_grad(probs, batch.targets[b], batch.weights[b], dprobs,
                              cfg_.train.lambda_dice);
            } else {
                lv.dice = dice_loss(probs, batch.targets[b]);
                lv.total = lv.dice;
                lv.has_terms = true;
                dice_grad(probs, batch.targets[b], dprobs);
            }
            Tensor<T> dl = softmax_classes_backward(probs, dprobs);
            const T inv_b = T(1) / static_cast<T>(b_n);
            for (std::size_t i = 0; i < per_sample; ++i)
                dlogits[b * per_sample + i] = dl[i] * inv_b;
            mean.total += lv.total / static_cast<T>(b_n);
            mean.attention += lv.attention / static_cast<T>(b_n);
            mean.dice += lv.dice / static_cast<T>(b_n);
        }

        if (!std::isfinite(static_cast<double>(mean.total)))
            throw ValidationError(diagnostic("non-finite loss", lr, mean));

        net_.backward(dlogits);
        sgd_update(lr);
        ++step_;
        return mean;
    }

    // Full training run: epochs of steps_per_epoch batches, CSV log, periodic
    // and final checkpoints. Returns the final checkpoint path.
    std::filesystem::path train(std::vector<SubjectRecord>& subjects,
                                const std::filesystem::path& out_dir,
                                bool quiet = true) {
        prepare_subjects(subjects);
        std::filesystem::create_directories(out_dir);
        const auto log_path = out_dir / "train_log.csv";
        // A resumed run appends to an existing log; anything else (including a
        // resume pointed at a fresh directory) starts one with the header row.
        const bool fresh = epoch_ == 0 || !std::filesystem::exists(log_path);
        std::ofstream log(log_path, fresh ? std::ios::trunc : std::ios::app);
        if (!log) throw IoError("cannot write training log " + log_path.string());
        if (fresh) log << "step,epoch,lr,loss_total,loss_attention,loss_dice\n";

        const int total = cfg_.train.total_epochs();
        while (epoch_ < total) {
            const double lr = warm_restart_lr(epoch_, cfg_.train);
            for (int s = 0; s < cfg_.train.steps_per_epoch; ++s) {
                Batch batch = assemble_batch(subjects);
                const LossValue<T> lv = step_on_batch(batch, lr);
                char row[256];
                std::snprintf(row, sizeof(row), "%llu,%d,%.8g,%.8g,%.8g,%.8g\n",
                              static_cast<unsigned long long>(step_), epoch_, lr,
                              double(lv.total), double(lv.attention), double(lv.dice));
                log << row;
            }
            log.flush();
            // epoch_ counts completed epochs, so a checkpoint written here
            // resumes at the next epoch instead of repeating this one
            ++epoch_;
            if (!quiet) {
                std::fprintf(stderr, "epoch %d/%d done (lr %.3g)\n", epoch_, total, lr);
            }
            if (cfg_.train.checkpoint_every > 0 && epoch_ % cfg_.train.checkpoint_every == 0 &&
                epoch_ < total)
                save(out_dir / ("epoch_" + std::to_string(epoch_) + ".ckpt"));
        }
        const auto final_path = out_dir / "final.ckpt";
        save(final_path);
        return final_path;
    }

    void save(const std::filesystem::path& path) {
        auto ckpt = nn::checkpoint_from_network(net_, serialize_run_config(cfg_),
                                                static_cast<std::uint64_t>(epoch_), step_,
                                                &momentum_);
        ckpt.sampler_state = sample_rng_.state();
        nn::save_checkpoint(path, ckpt);
    }

    // Restores parameters, momentum, the batch-sampler stream, and the
    // training position, so a resumed run reproduces an uninterrupted one
    // bit for bit. The caller is responsible for constructing the Trainer
    // with the same config.
    void resume_from(const std::filesystem::path& path) {
        auto ckpt = nn::load_checkpoint<T>(path);
        nn::load_checkpoint_into(net_, ckpt, &momentum_);
        if (!ckpt.sampler_state.empty()) sample_rng_.restore(ckpt.sampler_state);
        epoch_ = static_cast<int>(ckpt.epoch);
        step_ = ckpt.step;
    }

   private:
    void sgd_update(double lr) {
        auto params = net_.parameters();
        const T mu = static_cast<T>(cfg_.train.momentum);
        const T wd = static_cast<T>(cfg_.train.weight_decay);
        const T lr_t = static_cast<T>(lr);
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor<T>& w = *params[i].value;
            Tensor<T>& g = *params[i].grad;
            std::vector<T>& v = momentum_[i];
            for (std::size_t k = 0; k < w.numel(); ++k) {
                T grad = g[k];
                if (wd != T(0)) grad += wd * w[k];
                v[k] = mu * v[k] + grad;
                w[k] -= lr_t * v[k];
            }
        }
    }

    std::string diagnostic(const char* what, double lr, const LossValue<T>& lv) const {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "training aborted: %s at step %llu (epoch %d, lr %.6g): total=%.6g "
                      "attention=%.6g dice=%.6g",
                      what, static_cast<unsigned long long>(step_), epoch_, lr,
                      double(lv.total), double(lv.attention), double(lv.dice));
        return buf;
    }

    RunConfig cfg_;
    nn::DilatedAttentionNet<T> net_;
    Rng sample_rng_;
    std::vector<std::vector<T>> momentum_;
    int epoch_ = 0;
    std::uint64_t step_ = 0;
};

}  // namespace voxseg

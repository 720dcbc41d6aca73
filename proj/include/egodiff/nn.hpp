#pragma once

#include "egodiff/tensor.hpp"

#include <map>
#include <string>

namespace egodiff {

struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Named parameter tensors with per-parameter Adam state. Single-writer;
/// iteration order is the (sorted) name order everywhere, so gradient
/// accumulation and updates are deterministic.
class ParameterStore {
public:
    Tensor& create(const std::string& name, Tensor init);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    long num_parameters() const;
    long step_count() const { return step_; }

    void zero_grads();
    /// Adds the tape's gradients for every tracked parameter.
    void accumulate_grads(const GradientTape& tape);
    /// Adds a raw gradient buffer (deterministic cross-thread reduction).
    void add_grad(const std::string& name, const Eigen::ArrayXd& g);
    void scale_grads(double s);
    const Eigen::ArrayXd& grad(const std::string& name) const;
    double grad_max_abs() const;
    /// Global L2 norm over all gradients.
    double grad_norm() const;
    /// Rescales gradients so the global L2 norm is at most `max_norm`.
    void clip_grad_norm(double max_norm);

    /// Standard Adam with bias correction; requires zero_grads() to have
    /// been called for this step (missing gradients are an error).
    void adam_step(const AdamConfig& cfg);

    // checkpoint: directory with manifest.json + weights.bin (little-endian
    // f64, concatenated in manifest order). Adam moments and step count are
    // stored alongside so training resumes bit-exactly.
    void save(const std::string& dir, bool with_optimizer_state = true) const;
    void load(const std::string& dir);

    template <typename F>
    void for_each(F&& f) const {
        for (const auto& [name, entry] : params_) f(name, entry.tensor);
    }

private:
    struct Entry {
        Tensor tensor;
        Eigen::ArrayXd grad;
        Eigen::ArrayXd m;
        Eigen::ArrayXd v;
        bool grad_ready = false;
    };
    std::map<std::string, Entry> params_;
    long step_ = 0;
};

}  // namespace egodiff

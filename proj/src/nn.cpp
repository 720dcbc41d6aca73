#include "egodiff/nn.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace egodiff {

Tensor& ParameterStore::create(const std::string& name, Tensor init) {
    if (params_.count(name)) throw std::invalid_argument("parameter already exists: " + name);
    init.set_requires_grad(true);
    Entry e;
    e.tensor = std::move(init);
    e.grad = Eigen::ArrayXd::Zero(e.tensor.size());
    e.m = Eigen::ArrayXd::Zero(e.tensor.size());
    e.v = Eigen::ArrayXd::Zero(e.tensor.size());
    auto [it, ok] = params_.emplace(name, std::move(e));
    (void)ok;
    return it->second.tensor;
}

Tensor& ParameterStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no such parameter: " + name);
    return it->second.tensor;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no such parameter: " + name);
    return it->second.tensor;
}

long ParameterStore::num_parameters() const {
    long n = 0;
    for (const auto& [k, e] : params_) n += e.tensor.size();
    return n;
}

void ParameterStore::zero_grads() {
    for (auto& [k, e] : params_) {
        e.grad.setZero();
        e.grad_ready = true;
    }
}

void ParameterStore::accumulate_grads(const GradientTape& tape) {
    for (auto& [k, e] : params_) {
        if (!e.grad_ready) throw std::runtime_error("accumulate_grads before zero_grads");
        if (const auto* g = tape.find_grad(e.tensor.node())) e.grad += *g;
    }
}

void ParameterStore::add_grad(const std::string& name, const Eigen::ArrayXd& g) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no such parameter: " + name);
    if (!it->second.grad_ready) throw std::runtime_error("add_grad before zero_grads");
    if (g.size() != it->second.grad.size()) throw std::invalid_argument("add_grad: size mismatch for " + name);
    it->second.grad += g;
}

void ParameterStore::scale_grads(double s) {
    for (auto& [k, e] : params_) e.grad *= s;
}

const Eigen::ArrayXd& ParameterStore::grad(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("no such parameter: " + name);
    return it->second.grad;
}

double ParameterStore::grad_max_abs() const {
    double m = 0.0;
    for (const auto& [k, e] : params_) m = std::max(m, e.grad.abs().maxCoeff());
    return m;
}

double ParameterStore::grad_norm() const {
    double s = 0.0;
    for (const auto& [k, e] : params_) s += e.grad.square().sum();
    return std::sqrt(s);
}

void ParameterStore::clip_grad_norm(double max_norm) {
    if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
    const double n = grad_norm();
    if (n > max_norm) scale_grads(max_norm / n);
}

void ParameterStore::adam_step(const AdamConfig& cfg) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (auto& [k, e] : params_) {
        if (!e.grad_ready) throw std::runtime_error("adam_step: gradients not populated for " + k);
        e.m = cfg.beta1 * e.m + (1.0 - cfg.beta1) * e.grad;
        e.v = cfg.beta2 * e.v + (1.0 - cfg.beta2) * e.grad.square();
        Eigen::ArrayXd mhat = e.m / bc1;
        Eigen::ArrayXd vhat = e.v / bc2;
        e.tensor.assign(e.tensor.data() - cfg.lr * mhat / (vhat.sqrt() + cfg.eps));
        e.grad_ready = false;
    }
}

namespace {

void write_blob(std::ofstream& f, const Eigen::ArrayXd& a) {
    f.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
}

Eigen::ArrayXd read_blob(std::ifstream& f, long n) {
    Eigen::ArrayXd a(n);
    f.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: truncated weights.bin");
    return a;
}

}  // namespace

void ParameterStore::save(const std::string& dir, bool with_optimizer_state) const {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = 1;
    manifest["dtype"] = "f64";
    manifest["step"] = step_;
    manifest["optimizer_state"] = with_optimizer_state;
    auto& entries = manifest["entries"];
    long offset = 0;
    std::ofstream wf(fs::path(dir) / "weights.bin", std::ios::binary);
    if (!wf) throw std::runtime_error("checkpoint: cannot write weights.bin in " + dir);
    auto emit = [&](const std::string& name, const Shape& shape, const Eigen::ArrayXd& data) {
        entries.push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
        write_blob(wf, data);
        offset += data.size() * static_cast<long>(sizeof(double));
    };
    for (const auto& [name, e] : params_) emit(name, e.tensor.shape(), e.tensor.data());
    if (with_optimizer_state) {
        for (const auto& [name, e] : params_) emit("opt.m." + name, e.tensor.shape(), e.m);
        for (const auto& [name, e] : params_) emit("opt.v." + name, e.tensor.shape(), e.v);
    }
    std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
    mf << manifest.dump(2) << '\n';
}

void ParameterStore::load(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("checkpoint: missing manifest.json in " + dir);
    nlohmann::json manifest;
    mf >> manifest;
    if (manifest.at("format_version").get<int>() != 1) {
        throw std::runtime_error("checkpoint: unsupported format version");
    }
    step_ = manifest.at("step").get<long>();
    std::ifstream wf(fs::path(dir) / "weights.bin", std::ios::binary);
    if (!wf) throw std::runtime_error("checkpoint: missing weights.bin in " + dir);
    for (const auto& je : manifest.at("entries")) {
        const auto name = je.at("name").get<std::string>();
        const auto shape = je.at("shape").get<Shape>();
        const long n = shape_size(shape);
        wf.seekg(je.at("offset").get<long>());
        Eigen::ArrayXd data = read_blob(wf, n);
        if (name.rfind("opt.m.", 0) == 0) {
            get(name.substr(6));  // existence check
            params_.at(name.substr(6)).m = data;
        } else if (name.rfind("opt.v.", 0) == 0) {
            params_.at(name.substr(6)).v = data;
        } else {
            auto it = params_.find(name);
            if (it == params_.end()) {
                Tensor t = Tensor::from_data(shape, data);
                create(name, std::move(t));
            } else {
                if (it->second.tensor.shape() != shape) {
                    throw std::runtime_error("checkpoint: shape mismatch for " + name);
                }
                it->second.tensor.assign(data);
            }
        }
    }
}

}  // namespace egodiff

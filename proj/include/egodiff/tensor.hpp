#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace egodiff {

using Shape = std::vector<long>;

long shape_size(const Shape& s);
std::string shape_str(const Shape& s);

class GradientTape;

namespace detail {
struct TensorNode {
    Shape shape;
    Eigen::ArrayXd value;
    bool requires_grad = false;
};
}  // namespace detail

/// Shaped array of doubles with value semantics over a shared immutable
/// buffer. Operations record backward rules on the thread's active
/// GradientTape when any input requires gradients.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor from_data(Shape shape, const Eigen::ArrayXd& data);
    static Tensor from_data(Shape shape, std::span<const double> data);
    /// Deterministic standard normal draw (same seed -> identical tensor).
    static Tensor randn(Shape shape, uint64_t seed, double stddev = 1.0);

    const Shape& shape() const { return node_->shape; }
    long size() const { return node_->value.size(); }
    long dim(size_t i) const { return node_->shape[i]; }
    long ndim() const { return static_cast<long>(node_->shape.size()); }
    const Eigen::ArrayXd& data() const { return node_->value; }
    double operator[](long i) const { return node_->value[i]; }
    double scalar() const;

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        node_->requires_grad = v;
        return *this;
    }

    /// Same buffer, new shape (element count must match).
    Tensor reshape(Shape shape) const;

    /// In-place overwrite of the underlying buffer; only for leaf
    /// parameters between training steps.
    void assign(const Eigen::ArrayXd& v);

    detail::TensorNode* node() const { return node_.get(); }
    std::shared_ptr<detail::TensorNode> node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::TensorNode> node_;

    friend class GradientTape;
    friend Tensor make_op_result(Shape, Eigen::ArrayXd, std::vector<Tensor>,
                                 std::function<void(GradientTape&, const Tensor&)>);
};

/// Execution-ordered record of operations with backward rules. One tape per
/// thread may be active at a time; reverse iteration of the record is a
/// reverse topological walk of the computation.
class GradientTape {
public:
    GradientTape();
    ~GradientTape();
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    static GradientTape* active();

    /// Seeds d(loss)/d(loss) = 1 and propagates through the record in
    /// reverse. The op record is cleared; gradients stay queryable.
    void backward(const Tensor& loss);

    /// Gradient of `t` from the last backward pass (zeros if unreached).
    Eigen::ArrayXd grad(const Tensor& t) const;
    bool has_grad(const Tensor& t) const;
    const Eigen::ArrayXd* find_grad(const detail::TensorNode* n) const;

    // accumulation interface used by backward rules
    Eigen::ArrayXd& grad_buffer(const detail::TensorNode* n, long size);
    void add_grad(const Tensor& t, const Eigen::ArrayXd& g);

    void record(const Tensor& result, std::function<void(GradientTape&, const Tensor&)> back);

private:
    struct Entry {
        Tensor result;
        std::function<void(GradientTape&, const Tensor&)> back;
    };
    std::vector<Entry> entries_;
    std::unordered_map<const detail::TensorNode*, Eigen::ArrayXd> grads_;
    GradientTape* previous_ = nullptr;
};

// ---- elementwise and arithmetic ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor silu(const Tensor& x);
Tensor gelu(const Tensor& x);  // tanh approximation

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- linear algebra ----
/// a: [..., m, k], b: [k, n] or [..., k, n]; leading dims broadcast-batch.
Tensor matmul(const Tensor& a, const Tensor& b);
/// a [m, k] * b^T with b [n, k]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// Zero mean / unit variance over the last dimension; no learned affine.
Tensor layer_norm(const Tensor& x, double eps = 1e-5);
Tensor softmax_lastdim(const Tensor& x);
/// Multi-head scaled dot-product attention over 2-D [tokens, d] inputs;
/// bidirectional (no mask).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// ---- structural ----
/// out[i] = x[index[i]]; backward scatter-adds. Covers patchify,
/// space-to-depth, transposes and rolls with precomputed index maps.
Tensor gather(const Tensor& x, Shape out_shape, std::shared_ptr<const std::vector<long>> index);
Tensor take_rows(const Tensor& x, const std::vector<long>& rows);
Tensor slice_rows(const Tensor& x, long r0, long r1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, long c0, long c1);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Broadcast a length-d vector over the rows of [n, d].
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor mul_rowvec(const Tensor& x, const Tensor& v);

/// Interleaved sin/cos embedding with a geometric frequency ladder whose
/// periods span 1..1e4; D must be even. Not differentiated.
Eigen::ArrayXd sinusoidal_embedding(double t, long d);

Tensor seeded_normal(Shape shape, uint64_t seed);

/// SplitMix64 stream mix for deriving independent sub-seeds.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

}  // namespace egodiff

#include "egodiff/tensor.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace egodiff {

namespace {

thread_local GradientTape* g_active_tape = nullptr;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

void check_finite(const Eigen::ArrayXd& v, const char* op) {
    if (!v.allFinite()) {
        throw std::runtime_error(std::string("tensor op produced non-finite values: ") + op);
    }
}

}  // namespace

long shape_size(const Shape& s) {
    long n = 1;
    for (long e : s) {
        if (e <= 0) throw std::invalid_argument("shape extents must be positive");
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// ---- Tensor ----

Tensor make_op_result(Shape shape, Eigen::ArrayXd value, std::vector<Tensor> inputs,
                      std::function<void(GradientTape&, const Tensor&)> back) {
    check_finite(value, "op result");
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    for (const auto& in : inputs) node->requires_grad |= in.requires_grad();
    Tensor t(std::move(node));
    if (t.requires_grad() && GradientTape::active()) {
        GradientTape::active()->record(t, std::move(back));
    }
    return t;
}

Tensor Tensor::zeros(Shape shape) {
    const long n = shape_size(shape);
    return from_data(std::move(shape), Eigen::ArrayXd::Zero(n));
}

Tensor Tensor::full(Shape shape, double v) {
    const long n = shape_size(shape);
    return from_data(std::move(shape), Eigen::ArrayXd::Constant(n, v));
}

Tensor Tensor::from_data(Shape shape, const Eigen::ArrayXd& data) {
    if (shape_size(shape) != data.size()) {
        throw std::invalid_argument("from_data: element count mismatch for " + shape_str(shape));
    }
    check_finite(data, "from_data");
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->value = data;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::span<const double> data) {
    return from_data(std::move(shape), Eigen::Map<const Eigen::ArrayXd>(data.data(), static_cast<long>(data.size())));
}

Tensor Tensor::randn(Shape shape, uint64_t seed, double stddev) {
    const long n = shape_size(shape);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::ArrayXd v(n);
    for (long i = 0; i < n; ++i) v[i] = dist(rng) * stddev;
    return from_data(std::move(shape), v);
}

double Tensor::scalar() const {
    if (size() != 1) throw std::invalid_argument("scalar() on non-scalar tensor");
    return node_->value[0];
}

Tensor Tensor::reshape(Shape shape) const {
    if (shape_size(shape) != size()) {
        throw std::invalid_argument("reshape: element count mismatch " + shape_str(shape));
    }
    Tensor self = *this;
    Tensor out = make_op_result(std::move(shape), node_->value, {self},
                                [self](GradientTape& tape, const Tensor& res) {
                                    if (const auto* g = tape.find_grad(res.node())) tape.add_grad(self, *g);
                                });
    return out;
}

void Tensor::assign(const Eigen::ArrayXd& v) {
    if (v.size() != size()) throw std::invalid_argument("assign: size mismatch");
    check_finite(v, "assign");
    node_->value = v;
}

// ---- GradientTape ----

GradientTape::GradientTape() {
    previous_ = g_active_tape;
    g_active_tape = this;
}

GradientTape::~GradientTape() { g_active_tape = previous_; }

GradientTape* GradientTape::active() { return g_active_tape; }

void GradientTape::record(const Tensor& result, std::function<void(GradientTape&, const Tensor&)> back) {
    entries_.push_back({result, std::move(back)});
}

const Eigen::ArrayXd* GradientTape::find_grad(const detail::TensorNode* n) const {
    auto it = grads_.find(n);
    return it == grads_.end() ? nullptr : &it->second;
}

Eigen::ArrayXd& GradientTape::grad_buffer(const detail::TensorNode* n, long size) {
    auto it = grads_.find(n);
    if (it == grads_.end()) it = grads_.emplace(n, Eigen::ArrayXd::Zero(size)).first;
    return it->second;
}

void GradientTape::add_grad(const Tensor& t, const Eigen::ArrayXd& g) {
    grad_buffer(t.node(), t.size()) += g;
}

Eigen::ArrayXd GradientTape::grad(const Tensor& t) const {
    if (const auto* g = find_grad(t.node())) return *g;
    return Eigen::ArrayXd::Zero(t.size());
}

bool GradientTape::has_grad(const Tensor& t) const { return find_grad(t.node()) != nullptr; }

void GradientTape::backward(const Tensor& loss) {
    if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (entries_.empty()) throw std::runtime_error("backward: tape is empty");
    grads_.clear();
    grad_buffer(loss.node(), 1)[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (find_grad(it->result.node())) it->back(*this, it->result);
    }
    entries_.clear();
}

// ---- elementwise ----

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
    }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    return make_op_result(a.shape(), a.data() + b.data(), {a, b},
                          [a, b](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              if (a.requires_grad()) tape.add_grad(a, *g);
                              if (b.requires_grad()) tape.add_grad(b, *g);
                          });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    return make_op_result(a.shape(), a.data() - b.data(), {a, b},
                          [a, b](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              if (a.requires_grad()) tape.add_grad(a, *g);
                              if (b.requires_grad()) tape.add_grad(b, -*g);
                          });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    return make_op_result(a.shape(), a.data() * b.data(), {a, b},
                          [a, b](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              if (a.requires_grad()) tape.add_grad(a, *g * b.data());
                              if (b.requires_grad()) tape.add_grad(b, *g * a.data());
                          });
}

Tensor scale(const Tensor& a, double s) {
    if (!std::isfinite(s)) throw std::invalid_argument("scale: non-finite factor");
    return make_op_result(a.shape(), a.data() * s, {a},
                          [a, s](GradientTape& tape, const Tensor& res) {
                              if (const auto* g = tape.find_grad(res.node())) tape.add_grad(a, *g * s);
                          });
}

Tensor add_scalar(const Tensor& a, double s) {
    if (!std::isfinite(s)) throw std::invalid_argument("add_scalar: non-finite addend");
    return make_op_result(a.shape(), a.data() + s, {a},
                          [a](GradientTape& tape, const Tensor& res) {
                              if (const auto* g = tape.find_grad(res.node())) tape.add_grad(a, *g);
                          });
}

Tensor silu(const Tensor& x) {
    Eigen::ArrayXd sig = 1.0 / (1.0 + (-x.data()).exp());
    Eigen::ArrayXd y = x.data() * sig;
    check_finite(y, "silu");
    return make_op_result(x.shape(), std::move(y), {x},
                          [x, sig](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              tape.add_grad(x, *g * (sig * (1.0 + x.data() * (1.0 - sig))));
                          });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
    constexpr double kC = kGeluC;
    constexpr double kA = kGeluA;
    const Eigen::ArrayXd& v = x.data();
    Eigen::ArrayXd inner = kC * (v + kA * v.cube());
    Eigen::ArrayXd th = inner.tanh();
    Eigen::ArrayXd y = 0.5 * v * (1.0 + th);
    check_finite(y, "gelu");
    return make_op_result(x.shape(), std::move(y), {x},
                          [x, th](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              const Eigen::ArrayXd& v = x.data();
                              Eigen::ArrayXd sech2 = 1.0 - th.square();
                              Eigen::ArrayXd d = 0.5 * (1.0 + th) +
                                                 0.5 * v * sech2 * kGeluC *
                                                     (1.0 + 3.0 * kGeluA * v.square());
                              tape.add_grad(x, *g * d);
                          });
}

Tensor sum(const Tensor& x) {
    Eigen::ArrayXd y(1);
    y[0] = x.data().sum();
    check_finite(y, "sum");
    return make_op_result({1}, std::move(y), {x},
                          [x](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              tape.add_grad(x, Eigen::ArrayXd::Constant(x.size(), (*g)[0]));
                          });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2) throw std::invalid_argument("matmul: need >= 2 dims");
    const long m = a.shape()[a.shape().size() - 2];
    const long k = a.shape().back();
    const long kb = b.shape()[b.shape().size() - 2];
    const long n = b.shape().back();
    if (k != kb) {
        throw std::invalid_argument("matmul: inner dims disagree " + shape_str(a.shape()) + " x " +
                                    shape_str(b.shape()));
    }
    long batch = 1;
    for (size_t i = 0; i + 2 < a.shape().size(); ++i) batch *= a.shape()[i];
    const bool b_batched = b.ndim() > 2;
    if (b_batched) {
        long bbatch = 1;
        for (size_t i = 0; i + 2 < b.shape().size(); ++i) bbatch *= b.shape()[i];
        if (bbatch != batch) throw std::invalid_argument("matmul: batch dims disagree");
    }
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(n);
    Eigen::ArrayXd y(batch * m * n);
    for (long t = 0; t < batch; ++t) {
        MapConstMat ma(a.data().data() + t * m * k, m, k);
        MapConstMat mb(b.data().data() + (b_batched ? t * k * n : 0), k, n);
        MapMat(y.data() + t * m * n, m, n) = ma * mb;
    }
    check_finite(y, "matmul");
    return make_op_result(std::move(out_shape), std::move(y), {a, b},
                          [a, b, batch, m, k, n, b_batched](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              if (a.requires_grad()) {
                                  Eigen::ArrayXd da = Eigen::ArrayXd::Zero(a.size());
                                  for (long t = 0; t < batch; ++t) {
                                      MapConstMat mg(g->data() + t * m * n, m, n);
                                      MapConstMat mb(b.data().data() + (b_batched ? t * k * n : 0), k, n);
                                      MapMat(da.data() + t * m * k, m, k) = mg * mb.transpose();
                                  }
                                  tape.add_grad(a, da);
                              }
                              if (b.requires_grad()) {
                                  Eigen::ArrayXd db = Eigen::ArrayXd::Zero(b.size());
                                  for (long t = 0; t < batch; ++t) {
                                      MapConstMat mg(g->data() + t * m * n, m, n);
                                      MapConstMat ma(a.data().data() + t * m * k, m, k);
                                      MapMat(db.data() + (b_batched ? t * k * n : 0), k, n) += ma.transpose() * mg;
                                  }
                                  tape.add_grad(b, db);
                              }
                          });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw std::invalid_argument("matmul_nt: need 2-D inputs");
    const long m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (b.dim(1) != k) throw std::invalid_argument("matmul_nt: inner dims disagree");
    Eigen::ArrayXd y(m * n);
    {
        MapConstMat ma(a.data().data(), m, k);
        MapConstMat mb(b.data().data(), n, k);
        MapMat(y.data(), m, n) = ma * mb.transpose();
    }
    check_finite(y, "matmul_nt");
    return make_op_result({m, n}, std::move(y), {a, b},
                          [a, b, m, k, n](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              MapConstMat mg(g->data(), m, n);
                              if (a.requires_grad()) {
                                  Eigen::ArrayXd da(m * k);
                                  MapMat(da.data(), m, k) = mg * MapConstMat(b.data().data(), n, k);
                                  tape.add_grad(a, da);
                              }
                              if (b.requires_grad()) {
                                  Eigen::ArrayXd db(n * k);
                                  MapMat(db.data(), n, k) =
                                      mg.transpose() * MapConstMat(a.data().data(), m, k);
                                  tape.add_grad(b, db);
                              }
                          });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(x, w), b);
}

Tensor layer_norm(const Tensor& x, double eps) {
    if (x.shape().back() < 2) throw std::invalid_argument("layer_norm: last dim must be >= 2");
    const long d = x.shape().back();
    const long rows = x.size() / d;
    Eigen::ArrayXd y(x.size());
    Eigen::ArrayXd inv_std(rows);
    for (long r = 0; r < rows; ++r) {
        auto seg = x.data().segment(r * d, d);
        const double mu = seg.mean();
        const double var = (seg - mu).square().mean();
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        y.segment(r * d, d) = (seg - mu) * inv_std[r];
    }
    check_finite(y, "layer_norm");
    Tensor out = make_op_result(x.shape(), y, {x},
                                [x, y, inv_std, rows, d](GradientTape& tape, const Tensor& res) {
                                    const auto* g = tape.find_grad(res.node());
                                    if (!g) return;
                                    Eigen::ArrayXd dx(x.size());
                                    for (long r = 0; r < rows; ++r) {
                                        auto gs = g->segment(r * d, d);
                                        auto ys = y.segment(r * d, d);
                                        const double gm = gs.mean();
                                        const double gym = (gs * ys).mean();
                                        dx.segment(r * d, d) = inv_std[r] * (gs - gm - ys * gym);
                                    }
                                    tape.add_grad(x, dx);
                                });
    return out;
}

Tensor softmax_lastdim(const Tensor& x) {
    const long d = x.shape().back();
    const long rows = x.size() / d;
    Eigen::ArrayXd y(x.size());
    for (long r = 0; r < rows; ++r) {
        auto seg = x.data().segment(r * d, d);
        Eigen::ArrayXd e = (seg - seg.maxCoeff()).exp();
        y.segment(r * d, d) = e / e.sum();
    }
    check_finite(y, "softmax");
    return make_op_result(x.shape(), y, {x},
                          [x, y, rows, d](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              Eigen::ArrayXd dx(x.size());
                              for (long r = 0; r < rows; ++r) {
                                  auto gs = g->segment(r * d, d);
                                  auto ys = y.segment(r * d, d);
                                  const double dot = (gs * ys).sum();
                                  dx.segment(r * d, d) = ys * (gs - dot);
                              }
                              tape.add_grad(x, dx);
                          });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2) {
        throw std::invalid_argument("attention: expects 2-D [tokens, dim] inputs");
    }
    if (q.dim(1) != k.dim(1)) throw std::invalid_argument("attention: q/k dims disagree");
    if (k.dim(0) != v.dim(0)) throw std::invalid_argument("attention: k/v lengths disagree");
    if (heads < 1 || q.dim(1) % heads != 0 || v.dim(1) % heads != 0) {
        throw std::invalid_argument("attention: dims must divide head count");
    }
    const long dk = q.dim(1) / heads;
    const long dv = v.dim(1) / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(q, h * dk, (h + 1) * dk);
        Tensor kh = slice_cols(k, h * dk, (h + 1) * dk);
        Tensor vh = slice_cols(v, h * dv, (h + 1) * dv);
        Tensor logits = scale(matmul_nt(qh, kh), inv_sqrt);
        outs.push_back(matmul(softmax_lastdim(logits), vh));
    }
    return concat_cols(outs);
}

// ---- structural ----

Tensor gather(const Tensor& x, Shape out_shape, std::shared_ptr<const std::vector<long>> index) {
    const long n = shape_size(out_shape);
    if (static_cast<long>(index->size()) != n) throw std::invalid_argument("gather: index size mismatch");
    Eigen::ArrayXd y(n);
    for (long i = 0; i < n; ++i) {
        const long src = (*index)[static_cast<size_t>(i)];
        if (src < 0 || src >= x.size()) throw std::out_of_range("gather: index out of range");
        y[i] = x.data()[src];
    }
    return make_op_result(std::move(out_shape), std::move(y), {x},
                          [x, index, n](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              Eigen::ArrayXd dx = Eigen::ArrayXd::Zero(x.size());
                              for (long i = 0; i < n; ++i) dx[(*index)[static_cast<size_t>(i)]] += (*g)[i];
                              tape.add_grad(x, dx);
                          });
}

Tensor take_rows(const Tensor& x, const std::vector<long>& rows) {
    if (x.ndim() != 2) throw std::invalid_argument("take_rows: expects 2-D input");
    const long d = x.dim(1);
    const long n = static_cast<long>(rows.size());
    Eigen::ArrayXd y(n * d);
    for (long i = 0; i < n; ++i) {
        const long r = rows[static_cast<size_t>(i)];
        if (r < 0 || r >= x.dim(0)) throw std::out_of_range("take_rows: row out of range");
        y.segment(i * d, d) = x.data().segment(r * d, d);
    }
    auto rows_copy = std::make_shared<std::vector<long>>(rows);
    return make_op_result({n, d}, std::move(y), {x},
                          [x, rows_copy, n, d](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              Eigen::ArrayXd dx = Eigen::ArrayXd::Zero(x.size());
                              for (long i = 0; i < n; ++i) {
                                  dx.segment((*rows_copy)[static_cast<size_t>(i)] * d, d) += g->segment(i * d, d);
                              }
                              tape.add_grad(x, dx);
                          });
}

Tensor slice_rows(const Tensor& x, long r0, long r1) {
    if (x.ndim() != 2 || r0 < 0 || r1 > x.dim(0) || r0 >= r1) {
        throw std::invalid_argument("slice_rows: bad range");
    }
    const long d = x.dim(1);
    Eigen::ArrayXd y = x.data().segment(r0 * d, (r1 - r0) * d);
    return make_op_result({r1 - r0, d}, std::move(y), {x},
                          [x, r0, r1, d](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              Eigen::ArrayXd dx = Eigen::ArrayXd::Zero(x.size());
                              dx.segment(r0 * d, (r1 - r0) * d) = *g;
                              tape.add_grad(x, dx);
                          });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const long d = parts.front().dim(1);
    long rows = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(1) != d) throw std::invalid_argument("concat_rows: column mismatch");
        rows += p.dim(0);
    }
    Eigen::ArrayXd y(rows * d);
    long off = 0;
    for (const auto& p : parts) {
        y.segment(off, p.size()) = p.data();
        off += p.size();
    }
    return make_op_result({rows, d}, std::move(y), parts,
                          [parts](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              long off = 0;
                              for (const auto& p : parts) {
                                  if (p.requires_grad()) tape.add_grad(p, g->segment(off, p.size()));
                                  off += p.size();
                              }
                          });
}

Tensor slice_cols(const Tensor& x, long c0, long c1) {
    if (x.ndim() != 2 || c0 < 0 || c1 > x.dim(1) || c0 >= c1) {
        throw std::invalid_argument("slice_cols: bad range");
    }
    const long rows = x.dim(0), d = x.dim(1), w = c1 - c0;
    Eigen::ArrayXd y(rows * w);
    for (long r = 0; r < rows; ++r) y.segment(r * w, w) = x.data().segment(r * d + c0, w);
    return make_op_result({rows, w}, std::move(y), {x},
                          [x, c0, rows, d, w](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              Eigen::ArrayXd dx = Eigen::ArrayXd::Zero(x.size());
                              for (long r = 0; r < rows; ++r) dx.segment(r * d + c0, w) = g->segment(r * w, w);
                              tape.add_grad(x, dx);
                          });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const long rows = parts.front().dim(0);
    long d = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.dim(0) != rows) throw std::invalid_argument("concat_cols: row mismatch");
        d += p.dim(1);
    }
    Eigen::ArrayXd y(rows * d);
    long coff = 0;
    for (const auto& p : parts) {
        const long w = p.dim(1);
        for (long r = 0; r < rows; ++r) y.segment(r * d + coff, w) = p.data().segment(r * w, w);
        coff += w;
    }
    return make_op_result({rows, d}, std::move(y), parts,
                          [parts, rows, d](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              long coff = 0;
                              for (const auto& p : parts) {
                                  const long w = p.dim(1);
                                  if (p.requires_grad()) {
                                      Eigen::ArrayXd dp(rows * w);
                                      for (long r = 0; r < rows; ++r) {
                                          dp.segment(r * w, w) = g->segment(r * d + coff, w);
                                      }
                                      tape.add_grad(p, dp);
                                  }
                                  coff += w;
                              }
                          });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    const long d = x.shape().back();
    if (v.size() != d) throw std::invalid_argument("add_rowvec: vector length mismatch");
    const long rows = x.size() / d;
    Eigen::ArrayXd y(x.size());
    for (long r = 0; r < rows; ++r) y.segment(r * d, d) = x.data().segment(r * d, d) + v.data();
    return make_op_result(x.shape(), std::move(y), {x, v},
                          [x, v, rows, d](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              if (x.requires_grad()) tape.add_grad(x, *g);
                              if (v.requires_grad()) {
                                  Eigen::ArrayXd dv = Eigen::ArrayXd::Zero(d);
                                  for (long r = 0; r < rows; ++r) dv += g->segment(r * d, d);
                                  tape.add_grad(v, dv);
                              }
                          });
}

Tensor mul_rowvec(const Tensor& x, const Tensor& v) {
    const long d = x.shape().back();
    if (v.size() != d) throw std::invalid_argument("mul_rowvec: vector length mismatch");
    const long rows = x.size() / d;
    Eigen::ArrayXd y(x.size());
    for (long r = 0; r < rows; ++r) y.segment(r * d, d) = x.data().segment(r * d, d) * v.data();
    return make_op_result(x.shape(), std::move(y), {x, v},
                          [x, v, rows, d](GradientTape& tape, const Tensor& res) {
                              const auto* g = tape.find_grad(res.node());
                              if (!g) return;
                              if (x.requires_grad()) {
                                  Eigen::ArrayXd dx(x.size());
                                  for (long r = 0; r < rows; ++r) {
                                      dx.segment(r * d, d) = g->segment(r * d, d) * v.data();
                                  }
                                  tape.add_grad(x, dx);
                              }
                              if (v.requires_grad()) {
                                  Eigen::ArrayXd dv = Eigen::ArrayXd::Zero(d);
                                  for (long r = 0; r < rows; ++r) {
                                      dv += g->segment(r * d, d) * x.data().segment(r * d, d);
                                  }
                                  tape.add_grad(v, dv);
                              }
                          });
}

Eigen::ArrayXd sinusoidal_embedding(double t, long d) {
    if (d < 2 || d % 2 != 0) throw std::invalid_argument("sinusoidal_embedding: width must be even");
    Eigen::ArrayXd out(d);
    const long half = d / 2;
    for (long i = 0; i < half; ++i) {
        // periods 2*pi..2*pi*1e4 geometric
        const double freq = std::pow(1e4, -static_cast<double>(i) / static_cast<double>(half));
        out[2 * i] = std::sin(t * freq);
        out[2 * i + 1] = std::cos(t * freq);
    }
    return out;
}

Tensor seeded_normal(Shape shape, uint64_t seed) { return Tensor::randn(std::move(shape), seed); }

}  // namespace egodiff

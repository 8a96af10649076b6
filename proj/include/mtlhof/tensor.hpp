#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mtlhof/common.hpp"

namespace mtlhof {

// ---------------------------------------------------------------------------
// Dense row-major tensor with reverse-mode autodiff, templated on the scalar
// type. Production code instantiates float; gradient checks instantiate
// double. Reductions and gradient accumulation always run in double.
// ---------------------------------------------------------------------------

using TensorId = std::uint64_t;

namespace detail {

inline TensorId next_tensor_id() {
    static std::atomic<TensorId> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

inline long long shape_product(const std::vector<int>& shape) {
    long long n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

}  // namespace detail

template <class S>
class TensorT {
public:
    TensorT() : TensorT({}, std::vector<S>{S(0)}, false) {}

    TensorT(std::vector<int> shape, std::vector<S> data, bool grad_enabled = false)
        : s_(std::make_shared<Storage>()) {
        for (int d : shape) {
            if (d <= 0)
                throw ShapeError("tensor extents must be positive, got " +
                                 detail::shape_str(shape));
        }
        if (detail::shape_product(shape) != static_cast<long long>(data.size()))
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + detail::shape_str(shape));
        s_->shape = std::move(shape);
        s_->data = std::move(data);
        s_->grad_enabled = grad_enabled;
        s_->id = detail::next_tensor_id();
    }

    static TensorT zeros(std::vector<int> shape, bool grad_enabled = false) {
        std::vector<S> data(static_cast<std::size_t>(detail::shape_product(shape)), S(0));
        return TensorT(std::move(shape), std::move(data), grad_enabled);
    }

    static TensorT full(std::vector<int> shape, S value, bool grad_enabled = false) {
        std::vector<S> data(static_cast<std::size_t>(detail::shape_product(shape)), value);
        return TensorT(std::move(shape), std::move(data), grad_enabled);
    }

    static TensorT scalar(S value, bool grad_enabled = false) {
        return TensorT({}, std::vector<S>{value}, grad_enabled);
    }

    static TensorT randn(std::vector<int> shape, Rng& rng, double stdev,
                         bool grad_enabled = false) {
        std::vector<S> data(static_cast<std::size_t>(detail::shape_product(shape)));
        for (auto& v : data) v = static_cast<S>(rng.normal() * stdev);
        return TensorT(std::move(shape), std::move(data), grad_enabled);
    }

    const std::vector<int>& shape() const { return s_->shape; }
    int rank() const { return static_cast<int>(s_->shape.size()); }
    int dim(int axis) const { return s_->shape[static_cast<std::size_t>(axis)]; }
    int size() const { return static_cast<int>(s_->data.size()); }

    std::span<const S> data() const { return s_->data; }
    std::span<S> data() { return s_->data; }

    S item() const {
        if (size() != 1)
            throw ContractError("item() requires a scalar tensor, got shape " +
                                detail::shape_str(s_->shape));
        return s_->data[0];
    }

    bool grad_enabled() const { return s_->grad_enabled; }
    void set_grad_enabled(bool enabled) { s_->grad_enabled = enabled; }
    TensorId id() const { return s_->id; }

    const std::vector<S>* grad() const {
        return s_->grad.has_value() ? &*s_->grad : nullptr;
    }
    void set_grad(std::vector<S> g) {
        if (g.size() != s_->data.size())
            throw ShapeError("gradient size does not match tensor size");
        s_->grad = std::move(g);
    }
    void clear_grad() { s_->grad.reset(); }

    // Deep copy with a fresh identity.
    TensorT clone(std::optional<bool> grad_enabled = std::nullopt) const {
        TensorT out(s_->shape, s_->data, grad_enabled.value_or(s_->grad_enabled));
        return out;
    }

    bool same_storage(const TensorT& other) const { return s_ == other.s_; }

private:
    struct Storage {
        std::vector<int> shape;
        std::vector<S> data;
        std::optional<std::vector<S>> grad;
        bool grad_enabled = false;
        TensorId id = 0;
    };
    std::shared_ptr<Storage> s_;
};

using Tensor = TensorT<float>;

// ---------------------------------------------------------------------------
// Operation kinds and attributes.
// ---------------------------------------------------------------------------

enum class OpKind {
    matmul,
    add,
    scalar_mul,
    embedding_lookup,
    layer_norm,
    softmax,
    gelu,
    tanh,
    dropout,
    reshape,
    transpose,
    mean,
    cross_entropy_with_logits,
};

inline constexpr OpKind kAllOpKinds[] = {
    OpKind::matmul,        OpKind::add,     OpKind::scalar_mul,
    OpKind::embedding_lookup, OpKind::layer_norm, OpKind::softmax,
    OpKind::gelu,          OpKind::tanh,    OpKind::dropout,
    OpKind::reshape,       OpKind::transpose, OpKind::mean,
    OpKind::cross_entropy_with_logits,
};

inline const char* op_kind_name(OpKind kind) {
    switch (kind) {
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::scalar_mul: return "mul-by-scalar";
        case OpKind::embedding_lookup: return "embedding-lookup";
        case OpKind::layer_norm: return "layer-norm";
        case OpKind::softmax: return "softmax";
        case OpKind::gelu: return "gelu";
        case OpKind::tanh: return "tanh";
        case OpKind::dropout: return "dropout";
        case OpKind::reshape: return "reshape";
        case OpKind::transpose: return "transpose";
        case OpKind::mean: return "mean";
        case OpKind::cross_entropy_with_logits: return "cross-entropy-with-logits";
    }
    return "unknown";
}

inline OpKind op_kind_from_string(std::string_view name) {
    for (OpKind k : kAllOpKinds)
        if (name == op_kind_name(k)) return k;
    throw UnsupportedOpError("unsupported operation kind: " + std::string(name));
}

struct OpAttrs {
    double scalar = 1.0;            // mul-by-scalar
    double rate = 0.0;              // dropout
    std::uint64_t seed = 0;         // dropout
    std::vector<int> indices;       // embedding-lookup ids / cross-entropy labels
    std::vector<int> shape;         // reshape target / embedding-lookup prefix shape
    std::vector<int> perm;          // transpose permutation
};

// ---------------------------------------------------------------------------
// Tape: the recorded forward graph for one backward pass.
// ---------------------------------------------------------------------------

template <class S>
class TapeT {
public:
    // out_grad: upstream gradient of the node output (double precision).
    // in_grads: one accumulation buffer per input; nullptr for inputs that do
    // not require gradients.
    using BackwardFn =
        std::function<void(const std::vector<double>& out_grad,
                           const std::vector<std::vector<double>*>& in_grads)>;

    struct Node {
        OpKind kind;
        std::vector<TensorT<S>> inputs;
        TensorT<S> output;
        BackwardFn backward;
    };

    void record(OpKind kind, std::vector<TensorT<S>> inputs, TensorT<S> output,
                BackwardFn fn) {
        nodes_.push_back(Node{kind, std::move(inputs), std::move(output), std::move(fn)});
    }

    bool empty() const { return nodes_.empty(); }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

using Tape = TapeT<float>;

template <class S>
using GradMapT = std::unordered_map<TensorId, TensorT<S>>;
using GradMap = GradMapT<float>;

// ---------------------------------------------------------------------------
// Forward operations. Each op validates shapes, computes the output with
// double-precision accumulation, and records a tape node when a tape is
// supplied and any input carries gradients.
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
bool wants_grad(std::initializer_list<const TensorT<S>*> inputs) {
    for (const auto* t : inputs)
        if (t->grad_enabled()) return true;
    return false;
}

[[noreturn]] inline void shape_fail(OpKind kind, const std::string& detail_msg) {
    throw ShapeError(std::string(op_kind_name(kind)) + ": " + detail_msg);
}

}  // namespace detail

template <class S>
TensorT<S> matmul(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    int batch = 1, m = 0, k = 0, n = 0;
    if (as.size() == 2 && bs.size() == 2) {
        m = as[0]; k = as[1]; n = bs[1];
        if (bs[0] != k)
            detail::shape_fail(OpKind::matmul, "incompatible shapes " +
                               detail::shape_str(as) + " x " + detail::shape_str(bs));
    } else if (as.size() == 3 && bs.size() == 3) {
        batch = as[0]; m = as[1]; k = as[2]; n = bs[2];
        if (bs[0] != batch || bs[1] != k)
            detail::shape_fail(OpKind::matmul, "incompatible shapes " +
                               detail::shape_str(as) + " x " + detail::shape_str(bs));
    } else {
        detail::shape_fail(OpKind::matmul, "expects 2-D x 2-D or 3-D x 3-D, got " +
                           detail::shape_str(as) + " x " + detail::shape_str(bs));
    }

    std::vector<int> out_shape =
        (as.size() == 2) ? std::vector<int>{m, n} : std::vector<int>{batch, m, n};
    std::vector<S> out_data(static_cast<std::size_t>(batch) * m * n);
    const S* pa = a.data().data();
    const S* pb = b.data().data();
    for (int bi = 0; bi < batch; ++bi) {
        const S* A = pa + static_cast<std::size_t>(bi) * m * k;
        const S* B = pb + static_cast<std::size_t>(bi) * k * n;
        S* C = out_data.data() + static_cast<std::size_t>(bi) * m * n;
        std::vector<double> acc(static_cast<std::size_t>(n));
        for (int i = 0; i < m; ++i) {
            std::fill(acc.begin(), acc.end(), 0.0);
            const S* arow = A + static_cast<std::size_t>(i) * k;
            for (int p = 0; p < k; ++p) {
                double av = static_cast<double>(arow[p]);
                const S* brow = B + static_cast<std::size_t>(p) * n;
                for (int j = 0; j < n; ++j) acc[static_cast<std::size_t>(j)] += av * brow[j];
            }
            S* crow = C + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) crow[j] = static_cast<S>(acc[static_cast<std::size_t>(j)]);
        }
    }
    TensorT<S> out(out_shape, std::move(out_data), detail::wants_grad<S>({&a, &b}));

    if (tape && out.grad_enabled()) {
        int B_ = batch, M = m, K = k, N = n;
        TensorT<S> ac = a, bc = b;
        tape->record(OpKind::matmul, {a, b}, out,
                     [B_, M, K, N, ac, bc](const std::vector<double>& og,
                                           const std::vector<std::vector<double>*>& in) {
                         const S* A = ac.data().data();
                         const S* B = bc.data().data();
                         for (int bi = 0; bi < B_; ++bi) {
                             const double* G = og.data() + static_cast<std::size_t>(bi) * M * N;
                             if (in[0]) {
                                 double* dA = in[0]->data() + static_cast<std::size_t>(bi) * M * K;
                                 const S* Bm = B + static_cast<std::size_t>(bi) * K * N;
                                 for (int i = 0; i < M; ++i)
                                     for (int p = 0; p < K; ++p) {
                                         double s = 0.0;
                                         const double* grow = G + static_cast<std::size_t>(i) * N;
                                         const S* brow = Bm + static_cast<std::size_t>(p) * N;
                                         for (int j = 0; j < N; ++j) s += grow[j] * brow[j];
                                         dA[static_cast<std::size_t>(i) * K + p] += s;
                                     }
                             }
                             if (in[1]) {
                                 double* dB = in[1]->data() + static_cast<std::size_t>(bi) * K * N;
                                 const S* Am = A + static_cast<std::size_t>(bi) * M * K;
                                 for (int i = 0; i < M; ++i) {
                                     const double* grow = G + static_cast<std::size_t>(i) * N;
                                     const S* arow = Am + static_cast<std::size_t>(i) * K;
                                     for (int p = 0; p < K; ++p) {
                                         double av = static_cast<double>(arow[p]);
                                         double* drow = dB + static_cast<std::size_t>(p) * N;
                                         for (int j = 0; j < N; ++j) drow[j] += av * grow[j];
                                     }
                                 }
                             }
                         }
                     });
    }
    return out;
}

// Elementwise add for equal shapes, or bias-add of a rank-1 tensor over the
// last axis. No other broadcasting is supported.
template <class S>
TensorT<S> add(TapeT<S>* tape, const TensorT<S>& a, const TensorT<S>& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    bool elementwise = (as == bs);
    bool bias = !elementwise && bs.size() == 1 && !as.empty() && as.back() == bs[0];
    if (!elementwise && !bias)
        detail::shape_fail(OpKind::add, "incompatible shapes " + detail::shape_str(as) +
                           " + " + detail::shape_str(bs));

    std::vector<S> out_data(a.data().begin(), a.data().end());
    const S* pb = b.data().data();
    if (elementwise) {
        for (std::size_t i = 0; i < out_data.size(); ++i)
            out_data[i] = static_cast<S>(static_cast<double>(out_data[i]) + pb[i]);
    } else {
        std::size_t d = static_cast<std::size_t>(bs[0]);
        for (std::size_t i = 0; i < out_data.size(); ++i)
            out_data[i] = static_cast<S>(static_cast<double>(out_data[i]) + pb[i % d]);
    }
    TensorT<S> out(as, std::move(out_data), detail::wants_grad<S>({&a, &b}));

    if (tape && out.grad_enabled()) {
        bool is_bias = bias;
        std::size_t d = static_cast<std::size_t>(bs.empty() ? 1 : bs.back());
        tape->record(OpKind::add, {a, b}, out,
                     [is_bias, d](const std::vector<double>& og,
                                  const std::vector<std::vector<double>*>& in) {
                         if (in[0]) {
                             auto& da = *in[0];
                             for (std::size_t i = 0; i < og.size(); ++i) da[i] += og[i];
                         }
                         if (in[1]) {
                             auto& db = *in[1];
                             if (!is_bias) {
                                 for (std::size_t i = 0; i < og.size(); ++i) db[i] += og[i];
                             } else {
                                 for (std::size_t i = 0; i < og.size(); ++i) db[i % d] += og[i];
                             }
                         }
                     });
    }
    return out;
}

template <class S>
TensorT<S> scalar_mul(TapeT<S>* tape, const TensorT<S>& a, double scalar) {
    std::vector<S> out_data(a.data().begin(), a.data().end());
    for (auto& v : out_data) v = static_cast<S>(static_cast<double>(v) * scalar);
    TensorT<S> out(a.shape(), std::move(out_data), a.grad_enabled());
    if (tape && out.grad_enabled()) {
        tape->record(OpKind::scalar_mul, {a}, out,
                     [scalar](const std::vector<double>& og,
                              const std::vector<std::vector<double>*>& in) {
                         if (in[0])
                             for (std::size_t i = 0; i < og.size(); ++i)
                                 (*in[0])[i] += og[i] * scalar;
                     });
    }
    return out;
}

// Gathers rows of a 2-D table. The output has shape prefix_shape + {row_width}
// and indices.size() must equal product(prefix_shape). Also used to slice the
// first-token representation out of a flattened sequence.
template <class S>
TensorT<S> embedding_lookup(TapeT<S>* tape, const TensorT<S>& table,
                            const std::vector<int>& indices,
                            const std::vector<int>& prefix_shape) {
    if (table.rank() != 2)
        detail::shape_fail(OpKind::embedding_lookup,
                           "table must be 2-D, got " + detail::shape_str(table.shape()));
    long long rows = detail::shape_product(prefix_shape);
    if (rows != static_cast<long long>(indices.size()))
        detail::shape_fail(OpKind::embedding_lookup,
                           "prefix shape " + detail::shape_str(prefix_shape) +
                           " does not match " + std::to_string(indices.size()) + " indices");
    int v = table.dim(0), e = table.dim(1);
    for (int idx : indices)
        if (idx < 0 || idx >= v)
            detail::shape_fail(OpKind::embedding_lookup,
                               "index " + std::to_string(idx) + " out of range [0," +
                               std::to_string(v) + ")");

    std::vector<int> out_shape = prefix_shape;
    out_shape.push_back(e);
    std::vector<S> out_data(static_cast<std::size_t>(rows) * e);
    const S* pt = table.data().data();
    for (std::size_t r = 0; r < indices.size(); ++r) {
        const S* src = pt + static_cast<std::size_t>(indices[r]) * e;
        std::copy(src, src + e, out_data.begin() + static_cast<std::ptrdiff_t>(r * e));
    }
    TensorT<S> out(out_shape, std::move(out_data), table.grad_enabled());

    if (tape && out.grad_enabled()) {
        std::vector<int> idx = indices;
        int width = e;
        tape->record(OpKind::embedding_lookup, {table}, out,
                     [idx, width](const std::vector<double>& og,
                                  const std::vector<std::vector<double>*>& in) {
                         if (!in[0]) return;
                         auto& dt = *in[0];
                         for (std::size_t r = 0; r < idx.size(); ++r) {
                             double* dst = dt.data() + static_cast<std::size_t>(idx[r]) * width;
                             const double* src = og.data() + r * width;
                             for (int j = 0; j < width; ++j) dst[j] += src[j];
                         }
                     });
    }
    return out;
}

// Layer normalization over the last axis with learnable scale and shift.
template <class S>
TensorT<S> layer_norm(TapeT<S>* tape, const TensorT<S>& x, const TensorT<S>& gamma,
                      const TensorT<S>& beta, double eps = 1e-5) {
    if (x.rank() < 1)
        detail::shape_fail(OpKind::layer_norm, "input must have rank >= 1");
    int d = x.shape().back();
    if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
        detail::shape_fail(OpKind::layer_norm,
                           "scale/shift must be rank-1 of size " + std::to_string(d) +
                           ", got " + detail::shape_str(gamma.shape()) + " and " +
                           detail::shape_str(beta.shape()));
    std::size_t rows = static_cast<std::size_t>(x.size() / d);

    std::vector<S> out_data(static_cast<std::size_t>(x.size()));
    auto xhat = std::make_shared<std::vector<double>>(out_data.size());
    auto inv_sigma = std::make_shared<std::vector<double>>(rows);
    const S* px = x.data().data();
    const S* pg = gamma.data().data();
    const S* pb = beta.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = px + r * static_cast<std::size_t>(d);
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double c = row[j] - mean;
            var += c * c;
        }
        var /= d;
        double isig = 1.0 / std::sqrt(var + eps);
        (*inv_sigma)[r] = isig;
        for (int j = 0; j < d; ++j) {
            double xh = (row[j] - mean) * isig;
            (*xhat)[r * static_cast<std::size_t>(d) + j] = xh;
            out_data[r * static_cast<std::size_t>(d) + j] =
                static_cast<S>(xh * pg[j] + pb[j]);
        }
    }
    TensorT<S> out(x.shape(), std::move(out_data), detail::wants_grad<S>({&x, &gamma, &beta}));

    if (tape && out.grad_enabled()) {
        TensorT<S> gc = gamma;
        int dd = d;
        tape->record(OpKind::layer_norm, {x, gamma, beta}, out,
                     [xhat, inv_sigma, gc, dd, rows](
                         const std::vector<double>& og,
                         const std::vector<std::vector<double>*>& in) {
                         const S* g = gc.data().data();
                         for (std::size_t r = 0; r < rows; ++r) {
                             const double* go = og.data() + r * static_cast<std::size_t>(dd);
                             const double* xh = xhat->data() + r * static_cast<std::size_t>(dd);
                             if (in[0]) {
                                 double mean_gy = 0.0, mean_gyx = 0.0;
                                 for (int j = 0; j < dd; ++j) {
                                     double gy = go[j] * g[j];
                                     mean_gy += gy;
                                     mean_gyx += gy * xh[j];
                                 }
                                 mean_gy /= dd;
                                 mean_gyx /= dd;
                                 double isig = (*inv_sigma)[r];
                                 double* dx = in[0]->data() + r * static_cast<std::size_t>(dd);
                                 for (int j = 0; j < dd; ++j) {
                                     double gy = go[j] * g[j];
                                     dx[j] += (gy - mean_gy - xh[j] * mean_gyx) * isig;
                                 }
                             }
                             if (in[1]) {
                                 double* dg = in[1]->data();
                                 for (int j = 0; j < dd; ++j) dg[j] += go[j] * xh[j];
                             }
                             if (in[2]) {
                                 double* db = in[2]->data();
                                 for (int j = 0; j < dd; ++j) db[j] += go[j];
                             }
                         }
                     });
    }
    return out;
}

// Softmax over the last axis, optionally after adding a same-shape mask of
// additive biases (large negative values suppress masked positions). The mask
// is treated as a constant: no gradient flows into it.
template <class S>
TensorT<S> softmax(TapeT<S>* tape, const TensorT<S>& x,
                   const TensorT<S>* additive_mask = nullptr) {
    if (x.rank() < 1) detail::shape_fail(OpKind::softmax, "input must have rank >= 1");
    if (additive_mask && additive_mask->shape() != x.shape())
        detail::shape_fail(OpKind::softmax, "mask shape " +
                           detail::shape_str(additive_mask->shape()) +
                           " does not match input " + detail::shape_str(x.shape()));
    int d = x.shape().back();
    std::size_t rows = static_cast<std::size_t>(x.size() / d);

    std::vector<S> out_data(static_cast<std::size_t>(x.size()));
    const S* px = x.data().data();
    const S* pm = additive_mask ? additive_mask->data().data() : nullptr;
    std::vector<double> z(static_cast<std::size_t>(d));
    for (std::size_t r = 0; r < rows; ++r) {
        const S* row = px + r * static_cast<std::size_t>(d);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < d; ++j) {
            z[static_cast<std::size_t>(j)] =
                static_cast<double>(row[j]) +
                (pm ? static_cast<double>(pm[r * static_cast<std::size_t>(d) + j]) : 0.0);
            mx = std::max(mx, z[static_cast<std::size_t>(j)]);
        }
        double sum = 0.0;
        for (int j = 0; j < d; ++j) {
            double e = std::exp(z[static_cast<std::size_t>(j)] - mx);
            z[static_cast<std::size_t>(j)] = e;
            sum += e;
        }
        for (int j = 0; j < d; ++j)
            out_data[r * static_cast<std::size_t>(d) + j] =
                static_cast<S>(z[static_cast<std::size_t>(j)] / sum);
    }
    TensorT<S> out(x.shape(), std::move(out_data), x.grad_enabled());

    if (tape && out.grad_enabled()) {
        std::vector<TensorT<S>> inputs = {x};
        if (additive_mask) inputs.push_back(*additive_mask);
        TensorT<S> oc = out;
        int dd = d;
        tape->record(OpKind::softmax, std::move(inputs), out,
                     [oc, dd, rows](const std::vector<double>& og,
                                    const std::vector<std::vector<double>*>& in) {
                         if (!in[0]) return;
                         const S* y = oc.data().data();
                         for (std::size_t r = 0; r < rows; ++r) {
                             const double* go = og.data() + r * static_cast<std::size_t>(dd);
                             const S* yr = y + r * static_cast<std::size_t>(dd);
                             double dot = 0.0;
                             for (int j = 0; j < dd; ++j) dot += go[j] * yr[j];
                             double* dx = in[0]->data() + r * static_cast<std::size_t>(dd);
                             for (int j = 0; j < dd; ++j)
                                 dx[j] += static_cast<double>(yr[j]) * (go[j] - dot);
                         }
                     });
    }
    return out;
}

template <class S>
TensorT<S> gelu(TapeT<S>* tape, const TensorT<S>& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    std::vector<S> out_data(static_cast<std::size_t>(x.size()));
    const S* px = x.data().data();
    for (std::size_t i = 0; i < out_data.size(); ++i) {
        double v = px[i];
        out_data[i] = static_cast<S>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
    }
    TensorT<S> out(x.shape(), std::move(out_data), x.grad_enabled());
    if (tape && out.grad_enabled()) {
        TensorT<S> xc = x;
        tape->record(OpKind::gelu, {x}, out,
                     [xc, inv_sqrt2, inv_sqrt2pi](
                         const std::vector<double>& og,
                         const std::vector<std::vector<double>*>& in) {
                         if (!in[0]) return;
                         const S* px2 = xc.data().data();
                         for (std::size_t i = 0; i < og.size(); ++i) {
                             double v = px2[i];
                             double phi = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
                             double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                             (*in[0])[i] += og[i] * (phi + v * pdf);
                         }
                     });
    }
    return out;
}

template <class S>
TensorT<S> tanh(TapeT<S>* tape, const TensorT<S>& x) {
    std::vector<S> out_data(static_cast<std::size_t>(x.size()));
    const S* px = x.data().data();
    for (std::size_t i = 0; i < out_data.size(); ++i)
        out_data[i] = static_cast<S>(std::tanh(static_cast<double>(px[i])));
    TensorT<S> out(x.shape(), std::move(out_data), x.grad_enabled());
    if (tape && out.grad_enabled()) {
        TensorT<S> oc = out;
        tape->record(OpKind::tanh, {x}, out,
                     [oc](const std::vector<double>& og,
                          const std::vector<std::vector<double>*>& in) {
                         if (!in[0]) return;
                         const S* y = oc.data().data();
                         for (std::size_t i = 0; i < og.size(); ++i) {
                             double t = y[i];
                             (*in[0])[i] += og[i] * (1.0 - t * t);
                         }
                     });
    }
    return out;
}

// Inverted dropout with a deterministic per-call seed; rate 0 is the identity.
template <class S>
TensorT<S> dropout(TapeT<S>* tape, const TensorT<S>& x, double rate, std::uint64_t seed) {
    if (rate < 0.0 || rate >= 1.0)
        throw ContractError("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (rate == 0.0) return x;

    Rng rng(seed);
    auto mask = std::make_shared<std::vector<unsigned char>>(static_cast<std::size_t>(x.size()));
    double scale = 1.0 / (1.0 - rate);
    std::vector<S> out_data(static_cast<std::size_t>(x.size()));
    const S* px = x.data().data();
    for (std::size_t i = 0; i < out_data.size(); ++i) {
        bool keep = rng.uniform() >= rate;
        (*mask)[i] = keep ? 1 : 0;
        out_data[i] = keep ? static_cast<S>(px[i] * scale) : S(0);
    }
    TensorT<S> out(x.shape(), std::move(out_data), x.grad_enabled());
    if (tape && out.grad_enabled()) {
        tape->record(OpKind::dropout, {x}, out,
                     [mask, scale](const std::vector<double>& og,
                                   const std::vector<std::vector<double>*>& in) {
                         if (!in[0]) return;
                         for (std::size_t i = 0; i < og.size(); ++i)
                             if ((*mask)[i]) (*in[0])[i] += og[i] * scale;
                     });
    }
    return out;
}

template <class S>
TensorT<S> reshape(TapeT<S>* tape, const TensorT<S>& x, std::vector<int> new_shape) {
    if (detail::shape_product(new_shape) != static_cast<long long>(x.size()))
        detail::shape_fail(OpKind::reshape, "cannot reshape " +
                           detail::shape_str(x.shape()) + " to " +
                           detail::shape_str(new_shape));
    std::vector<S> out_data(x.data().begin(), x.data().end());
    TensorT<S> out(std::move(new_shape), std::move(out_data), x.grad_enabled());
    if (tape && out.grad_enabled()) {
        tape->record(OpKind::reshape, {x}, out,
                     [](const std::vector<double>& og,
                        const std::vector<std::vector<double>*>& in) {
                         if (!in[0]) return;
                         for (std::size_t i = 0; i < og.size(); ++i) (*in[0])[i] += og[i];
                     });
    }
    return out;
}

namespace detail {

inline std::vector<long long> row_major_strides(const std::vector<int>& shape) {
    std::vector<long long> strides(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i)
        strides[static_cast<std::size_t>(i)] =
            strides[static_cast<std::size_t>(i + 1)] * shape[static_cast<std::size_t>(i + 1)];
    return strides;
}

// Maps each flat input offset of `in_shape` to its flat offset after applying
// the axis permutation `perm` (out axis d draws from in axis perm[d]).
inline std::vector<std::size_t> transpose_mapping(const std::vector<int>& in_shape,
                                                  const std::vector<int>& perm) {
    std::vector<int> out_shape(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d)
        out_shape[d] = in_shape[static_cast<std::size_t>(perm[d])];
    auto in_strides = row_major_strides(in_shape);
    auto out_strides = row_major_strides(out_shape);
    // out position of in axis a
    std::vector<std::size_t> axis_of(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d)
        axis_of[static_cast<std::size_t>(perm[d])] = d;

    std::size_t total = 1;
    for (int d : in_shape) total *= static_cast<std::size_t>(d);
    std::vector<std::size_t> map(total);
    std::vector<int> coord(in_shape.size(), 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        long long out_flat = 0;
        for (std::size_t a = 0; a < in_shape.size(); ++a)
            out_flat += coord[a] * out_strides[axis_of[a]];
        map[flat] = static_cast<std::size_t>(out_flat);
        for (int a = static_cast<int>(in_shape.size()) - 1; a >= 0; --a) {
            if (++coord[static_cast<std::size_t>(a)] < in_shape[static_cast<std::size_t>(a)]) break;
            coord[static_cast<std::size_t>(a)] = 0;
        }
    }
    return map;
}

}  // namespace detail

template <class S>
TensorT<S> transpose(TapeT<S>* tape, const TensorT<S>& x, std::vector<int> perm) {
    const auto& xs = x.shape();
    if (perm.size() != xs.size())
        detail::shape_fail(OpKind::transpose, "permutation size " +
                           std::to_string(perm.size()) + " does not match rank " +
                           std::to_string(xs.size()));
    std::vector<bool> seen(perm.size(), false);
    for (int p : perm) {
        if (p < 0 || p >= static_cast<int>(perm.size()) || seen[static_cast<std::size_t>(p)])
            detail::shape_fail(OpKind::transpose, "invalid permutation");
        seen[static_cast<std::size_t>(p)] = true;
    }

    std::vector<int> out_shape(perm.size());
    for (std::size_t d = 0; d < perm.size(); ++d)
        out_shape[d] = xs[static_cast<std::size_t>(perm[d])];
    auto map = std::make_shared<std::vector<std::size_t>>(
        detail::transpose_mapping(xs, perm));
    std::vector<S> out_data(static_cast<std::size_t>(x.size()));
    const S* px = x.data().data();
    for (std::size_t i = 0; i < out_data.size(); ++i) out_data[(*map)[i]] = px[i];
    TensorT<S> out(std::move(out_shape), std::move(out_data), x.grad_enabled());

    if (tape && out.grad_enabled()) {
        tape->record(OpKind::transpose, {x}, out,
                     [map](const std::vector<double>& og,
                           const std::vector<std::vector<double>*>& in) {
                         if (!in[0]) return;
                         for (std::size_t i = 0; i < og.size(); ++i)
                             (*in[0])[i] += og[(*map)[i]];
                     });
    }
    return out;
}

// Mean over all elements, producing a rank-0 scalar.
template <class S>
TensorT<S> mean_all(TapeT<S>* tape, const TensorT<S>& x) {
    double sum = 0.0;
    for (S v : x.data()) sum += static_cast<double>(v);
    double n = static_cast<double>(x.size());
    TensorT<S> out = TensorT<S>::scalar(static_cast<S>(sum / n), x.grad_enabled());
    if (tape && out.grad_enabled()) {
        std::size_t count = static_cast<std::size_t>(x.size());
        tape->record(OpKind::mean, {x}, out,
                     [count, n](const std::vector<double>& og,
                                const std::vector<std::vector<double>*>& in) {
                         if (!in[0]) return;
                         double g = og[0] / n;
                         for (std::size_t i = 0; i < count; ++i) (*in[0])[i] += g;
                     });
    }
    return out;
}

// Mean cross-entropy between rows of logits and integer labels, as one fused,
// numerically stable op. Returns a rank-0 scalar >= 0.
template <class S>
TensorT<S> cross_entropy_with_logits(TapeT<S>* tape, const TensorT<S>& logits,
                                     const std::vector<int>& labels) {
    if (logits.rank() != 2)
        detail::shape_fail(OpKind::cross_entropy_with_logits,
                           "logits must be 2-D, got " + detail::shape_str(logits.shape()));
    int b = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(labels.size()) != b)
        detail::shape_fail(OpKind::cross_entropy_with_logits,
                           "expected " + std::to_string(b) + " labels, got " +
                           std::to_string(labels.size()));
    for (int y : labels)
        if (y < 0 || y >= k)
            throw ContractError("cross-entropy-with-logits: label " + std::to_string(y) +
                                " out of range [0," + std::to_string(k) + ")");

    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b) * k);
    const S* pl = logits.data().data();
    double total = 0.0;
    for (int r = 0; r < b; ++r) {
        const S* row = pl + static_cast<std::size_t>(r) * k;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
        double lse = mx + std::log(sum);
        total += lse - static_cast<double>(row[labels[static_cast<std::size_t>(r)]]);
        for (int j = 0; j < k; ++j)
            (*probs)[static_cast<std::size_t>(r) * k + j] =
                std::exp(static_cast<double>(row[j]) - lse);
    }
    TensorT<S> out = TensorT<S>::scalar(static_cast<S>(total / b), logits.grad_enabled());

    if (tape && out.grad_enabled()) {
        std::vector<int> lab = labels;
        int bb = b, kk = k;
        tape->record(OpKind::cross_entropy_with_logits, {logits}, out,
                     [probs, lab, bb, kk](const std::vector<double>& og,
                                          const std::vector<std::vector<double>*>& in) {
                         if (!in[0]) return;
                         double g = og[0] / bb;
                         for (int r = 0; r < bb; ++r) {
                             double* dl = in[0]->data() + static_cast<std::size_t>(r) * kk;
                             const double* pr = probs->data() + static_cast<std::size_t>(r) * kk;
                             for (int j = 0; j < kk; ++j) {
                                 double onehot = (j == lab[static_cast<std::size_t>(r)]) ? 1.0 : 0.0;
                                 dl[j] += g * (pr[j] - onehot);
                             }
                         }
                     });
    }
    return out;
}

// ---------------------------------------------------------------------------
// Uniform dispatcher over all operation kinds.
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> apply(TapeT<S>* tape, OpKind kind, const std::vector<TensorT<S>>& inputs,
                 const OpAttrs& attrs = {}) {
    auto need = [&](std::size_t lo, std::size_t hi) {
        if (inputs.size() < lo || inputs.size() > hi)
            throw ContractError(std::string(op_kind_name(kind)) + ": expected " +
                                std::to_string(lo) +
                                (hi != lo ? "-" + std::to_string(hi) : "") +
                                " inputs, got " + std::to_string(inputs.size()));
    };
    switch (kind) {
        case OpKind::matmul:
            need(2, 2);
            return matmul(tape, inputs[0], inputs[1]);
        case OpKind::add:
            need(2, 2);
            return add(tape, inputs[0], inputs[1]);
        case OpKind::scalar_mul:
            need(1, 1);
            return scalar_mul(tape, inputs[0], attrs.scalar);
        case OpKind::embedding_lookup:
            need(1, 1);
            return embedding_lookup(tape, inputs[0], attrs.indices, attrs.shape);
        case OpKind::layer_norm:
            need(3, 3);
            return layer_norm(tape, inputs[0], inputs[1], inputs[2]);
        case OpKind::softmax:
            need(1, 2);
            return softmax(tape, inputs[0], inputs.size() == 2 ? &inputs[1] : nullptr);
        case OpKind::gelu:
            need(1, 1);
            return gelu(tape, inputs[0]);
        case OpKind::tanh:
            need(1, 1);
            return tanh(tape, inputs[0]);
        case OpKind::dropout:
            need(1, 1);
            return dropout(tape, inputs[0], attrs.rate, attrs.seed);
        case OpKind::reshape:
            need(1, 1);
            return reshape(tape, inputs[0], attrs.shape);
        case OpKind::transpose:
            need(1, 1);
            return transpose(tape, inputs[0], attrs.perm);
        case OpKind::mean:
            need(1, 1);
            return mean_all(tape, inputs[0]);
        case OpKind::cross_entropy_with_logits:
            need(1, 1);
            return cross_entropy_with_logits(tape, inputs[0], attrs.indices);
    }
    throw UnsupportedOpError("unsupported operation kind");
}

// ---------------------------------------------------------------------------
// Reverse pass. Gradients accumulate in double precision and are returned for
// every grad-enabled leaf reachable from the loss (also stored on the leaf
// tensors themselves).
// ---------------------------------------------------------------------------

template <class S>
GradMapT<S> backward(const TensorT<S>& loss, TapeT<S>& tape) {
    if (loss.size() != 1)
        throw ContractError("backward: loss must be scalar, got shape " +
                            detail::shape_str(loss.shape()));
    if (tape.empty()) throw ContractError("backward: tape is empty");

    std::unordered_map<TensorId, std::vector<double>> buffers;
    buffers[loss.id()] = {1.0};

    std::unordered_set<TensorId> produced;
    for (const auto& node : tape.nodes()) produced.insert(node.output.id());

    const auto& nodes = tape.nodes();
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        auto bit = buffers.find(it->output.id());
        if (bit == buffers.end()) continue;
        std::vector<std::vector<double>*> in_grads(it->inputs.size(), nullptr);
        for (std::size_t i = 0; i < it->inputs.size(); ++i) {
            const auto& input = it->inputs[i];
            if (!input.grad_enabled()) continue;
            auto& buf = buffers[input.id()];
            if (buf.empty()) buf.assign(static_cast<std::size_t>(input.size()), 0.0);
            in_grads[i] = &buf;
        }
        // buffers may rehash above; re-find the output buffer before use.
        it->backward(buffers.at(it->output.id()), in_grads);
    }

    GradMapT<S> grads;
    std::unordered_set<TensorId> emitted;
    for (const auto& node : tape.nodes()) {
        for (const auto& input : node.inputs) {
            if (!input.grad_enabled() || produced.count(input.id()) ||
                emitted.count(input.id()))
                continue;
            auto bit = buffers.find(input.id());
            if (bit == buffers.end()) continue;
            std::vector<S> g(bit->second.size());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<S>(bit->second[i]);
            TensorT<S> leaf = input;
            leaf.set_grad(g);
            grads.emplace(input.id(), TensorT<S>(input.shape(), std::move(g), false));
            emitted.insert(input.id());
        }
    }
    return grads;
}

template <class S>
double grad_norm(const GradMapT<S>& grads) {
    double sum = 0.0;
    for (const auto& [id, g] : grads)
        for (S v : g.data()) sum += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(sum);
}

}  // namespace mtlhof

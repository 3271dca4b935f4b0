#include "clvit/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "clvit/flop_cost.hpp"
#include "clvit/kernels.hpp"

namespace clvit {

namespace {

thread_local Tape* g_active_tape = nullptr;

using i64 = std::int64_t;
namespace fc = flopcount;
namespace kn = kernels;

Shape check_shape(const Shape& s) {
    for (auto d : s) {
        if (d < 1) throw ShapeError("tensor dims must be >= 1, got " + shape_str(s));
    }
    return s;
}

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() >= big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Strided permutation copy: dst multi-index i gets src index idx with
// idx[perm[i]] walking the source. accumulate adds instead of assigning.
void permute_impl(const double* src, const Shape& in_shape, const std::vector<int>& perm,
                  double* dst, bool accumulate) {
    const int nd = static_cast<int>(in_shape.size());
    Shape out_shape(nd);
    for (int i = 0; i < nd; ++i) out_shape[i] = in_shape[perm[i]];
    std::vector<i64> out_strides(nd, 1);
    for (int i = nd - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * out_shape[i + 1];
    // stride applied to the source multi-index axis perm[i]
    std::vector<i64> scatter(nd, 0);
    for (int i = 0; i < nd; ++i) scatter[perm[i]] = out_strides[i];

    std::vector<i64> idx(nd, 0);
    const i64 n = numel(in_shape);
    i64 out_off = 0;
    for (i64 flat = 0; flat < n; ++flat) {
        if (accumulate)
            dst[out_off] += src[flat];
        else
            dst[out_off] = src[flat];
        for (int ax = nd - 1; ax >= 0; --ax) {
            out_off += scatter[ax];
            if (++idx[ax] < in_shape[ax]) break;
            out_off -= scatter[ax] * in_shape[ax];
            idx[ax] = 0;
        }
    }
}

std::vector<int> inverse_perm(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<int>(i);
    return inv;
}

}  // namespace

// ------------------------------ Tensor ------------------------------------

Tensor Tensor::zeros(Shape shape) {
    return from_data(shape, std::vector<double>(static_cast<std::size_t>(clvit::numel(shape)), 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
    return from_data(shape, std::vector<double>(static_cast<std::size_t>(clvit::numel(shape)), value));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    check_shape(shape);
    if (clvit::numel(shape) != static_cast<i64>(data.size()))
        throw ShapeError("from_data: shape " + shape_str(shape) + " wants " +
                         std::to_string(clvit::numel(shape)) + " values, got " +
                         std::to_string(data.size()));
    Tensor t;
    t.storage_ = std::make_shared<std::vector<double>>(std::move(data));
    t.shape_ = std::move(shape);
    return t;
}

std::int64_t Tensor::size(int axis) const {
    const int nd = ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd)
        throw ShapeError("size: axis out of range for " + shape_str(shape_));
    return shape_[axis];
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item: tensor is not scalar, shape " + shape_str(shape_));
    return (*storage_)[0];
}

double Tensor::at(std::int64_t flat_index) const {
    if (flat_index < 0 || flat_index >= numel())
        throw IndexError("at: flat index " + std::to_string(flat_index) + " out of range");
    return (*storage_)[static_cast<std::size_t>(flat_index)];
}

Tensor Tensor::named(std::string n) const {
    Tensor t = *this;
    t.name_ = std::move(n);
    return t;
}

Tensor Tensor::trainable(std::string n) const {
    Tensor t = *this;
    t.name_ = std::move(n);
    t.requires_grad_ = true;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
}

Tensor Tensor::frozen() const {
    Tensor t = *this;
    t.requires_grad_ = false;
    t.tape_ = nullptr;
    t.node_ = -1;
    return t;
}

Tensor Tensor::detached() const {
    Tensor t = frozen();
    t.name_.clear();
    return t;
}

const Tensor& GradMap::at(const std::string& n) const {
    auto it = grads.find(n);
    if (it == grads.end()) throw ContractError("GradMap: no gradient entry for '" + n + "'");
    return it->second;
}

// ------------------------------- Tape -------------------------------------

struct OpAccess {
    static int input_id(Tape& tp, const Tensor& t) {
        if (t.tape_ == &tp && t.node_ >= 0) return t.node_;
        if (t.requires_grad_) return tp.leaf(t);
        return -1;
    }
    static void link_output(Tape& tp, Tensor& t, int node) {
        t.tape_ = &tp;
        t.node_ = node;
    }
    static int record(Tape& tp, Shape s, std::function<void(Tape&, const std::vector<double>&)> fn) {
        return tp.record(std::move(s), std::move(fn));
    }
    static double* grad_for(Tape& tp, int id) { return tp.grad_for(id); }
    static bool on_tape(const Tape& tp, const Tensor& t) {
        return t.tape_ == &tp && t.node_ >= 0;
    }
};

namespace {

// Accumulates g into the grad buffer of node id.
void accum_grad(Tape& tp, int id, const double* g, i64 n) {
    kn::add_inplace(OpAccess::grad_for(tp, id), g, n);
}

}  // namespace

int Tape::leaf(const Tensor& t) {
    const void* key = static_cast<const void*>(t.storage_.get());
    auto it = leaf_ids_.find(key);
    if (it != leaf_ids_.end()) return it->second;
    if (t.name_.empty()) throw ContractError("requires-grad leaf tensors must be named");
    auto nm = leaf_names_.find(t.name_);
    if (nm != leaf_names_.end() && nm->second != key)
        throw ContractError("duplicate leaf name on tape: '" + t.name_ + "'");
    nodes_.push_back(Node{t.shape_, {}, false, true, t.name_, nullptr});
    const int id = static_cast<int>(nodes_.size()) - 1;
    leaf_ids_[key] = id;
    leaf_names_[t.name_] = key;
    return id;
}

int Tape::record(Shape out_shape, std::function<void(Tape&, const std::vector<double>&)> fn) {
    nodes_.push_back(Node{std::move(out_shape), {}, false, false, {}, std::move(fn)});
    return static_cast<int>(nodes_.size()) - 1;
}

double* Tape::grad_for(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) {
        n.grad.assign(static_cast<std::size_t>(numel(n.shape)), 0.0);
        n.has_grad = true;
    }
    return n.grad.data();
}

GradMap Tape::backward(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward: loss tensor is undefined");
    if (loss.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (loss.tape_ != this || loss.node_ < 0)
        throw ContractError("backward: loss was not produced by tape-recorded ops");

    grad_for(loss.node_)[0] = 1.0;
    for (int id = loss.node_; id >= 0; --id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.has_grad || !n.backward) continue;
        n.backward(*this, n.grad);
    }

    GradMap gm;
    for (const Node& n : nodes_) {
        if (!n.is_leaf) continue;
        gm.grads[n.leaf_name] =
            n.has_grad ? Tensor::from_data(n.shape, n.grad) : Tensor::zeros(n.shape);
    }
    return gm;
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

Tape* active_tape() { return g_active_tape; }

// -------------------------------- ops -------------------------------------

namespace {

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw ContractError(std::string(op) + ": undefined tensor operand");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_defined(a, "add");
    require_defined(b, "add");
    const bool same = a.shape() == b.shape();
    const bool suffix = !same && is_suffix(b.shape(), a.shape());
    if (!same && !suffix)
        throw ShapeError("add: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));

    const i64 n = a.numel();
    const i64 nb = b.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    if (same)
        kn::add(a.data(), b.data(), out.data(), n);
    else
        kn::add_bcast_rows(a.data(), b.data(), out.data(), n / nb, nb);
    fc::add(fc::elementwise(static_cast<fc::u64>(n)));

    Tensor res = Tensor::from_data(a.shape(), std::move(out));
    if (Tape* tp = g_active_tape) {
        const int ia = OpAccess::input_id(*tp, a);
        const int ib = OpAccess::input_id(*tp, b);
        if (ia >= 0 || ib >= 0) {
            const int node = OpAccess::record(
                *tp, res.shape(), [ia, ib, n, nb](Tape& t, const std::vector<double>& g) {
                    if (ia >= 0) {
                        accum_grad(t, ia, g.data(), n);
                        fc::add(fc::elementwise(static_cast<fc::u64>(n)));
                    }
                    if (ib >= 0) {
                        if (nb == n) {
                            accum_grad(t, ib, g.data(), n);
                            fc::add(fc::elementwise(static_cast<fc::u64>(n)));
                        } else {
                            kn::reduce_rows(g.data(), OpAccess::grad_for(t, ib), n / nb, nb, true);
                            fc::add(fc::reduce(static_cast<fc::u64>(n)));
                        }
                    }
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_defined(a, "sub");
    require_defined(b, "sub");
    if (a.shape() != b.shape())
        throw ShapeError("sub: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const i64 n = a.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (i64 i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = pa[i] - pb[i];
    fc::add(fc::elementwise(static_cast<fc::u64>(n)));

    Tensor res = Tensor::from_data(a.shape(), std::move(out));
    if (Tape* tp = g_active_tape) {
        const int ia = OpAccess::input_id(*tp, a);
        const int ib = OpAccess::input_id(*tp, b);
        if (ia >= 0 || ib >= 0) {
            const int node =
                OpAccess::record(*tp, res.shape(), [ia, ib, n](Tape& t, const std::vector<double>& g) {
                    if (ia >= 0) {
                        accum_grad(t, ia, g.data(), n);
                        fc::add(fc::elementwise(static_cast<fc::u64>(n)));
                    }
                    if (ib >= 0) {
                        kn::axpy(-1.0, g.data(), OpAccess::grad_for(t, ib), n);
                        fc::add(fc::elementwise(2 * static_cast<fc::u64>(n)));
                    }
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor neg(const Tensor& a) { return scalar_mul(a, -1.0); }

Tensor mul(const Tensor& a, const Tensor& b) {
    require_defined(a, "mul");
    require_defined(b, "mul");
    if (a.shape() != b.shape())
        throw ShapeError("mul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const i64 n = a.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    kn::mul(a.data(), b.data(), out.data(), n);
    fc::add(fc::elementwise(static_cast<fc::u64>(n)));

    Tensor res = Tensor::from_data(a.shape(), std::move(out));
    if (Tape* tp = g_active_tape) {
        const int ia = OpAccess::input_id(*tp, a);
        const int ib = OpAccess::input_id(*tp, b);
        if (ia >= 0 || ib >= 0) {
            Tensor av = a;
            Tensor bv = b;
            const int node = OpAccess::record(
                *tp, res.shape(), [ia, ib, av, bv, n](Tape& t, const std::vector<double>& g) {
                    std::vector<double> tmp(static_cast<std::size_t>(n));
                    if (ia >= 0) {
                        kn::mul(g.data(), bv.data(), tmp.data(), n);
                        accum_grad(t, ia, tmp.data(), n);
                        fc::add(fc::elementwise(2 * static_cast<fc::u64>(n)));
                    }
                    if (ib >= 0) {
                        kn::mul(g.data(), av.data(), tmp.data(), n);
                        accum_grad(t, ib, tmp.data(), n);
                        fc::add(fc::elementwise(2 * static_cast<fc::u64>(n)));
                    }
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor scalar_mul(const Tensor& a, double c) {
    require_defined(a, "scalar_mul");
    const i64 n = a.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    kn::scale(a.data(), c, out.data(), n);
    fc::add(fc::elementwise(static_cast<fc::u64>(n)));

    Tensor res = Tensor::from_data(a.shape(), std::move(out));
    if (Tape* tp = g_active_tape) {
        const int ia = OpAccess::input_id(*tp, a);
        if (ia >= 0) {
            const int node =
                OpAccess::record(*tp, res.shape(), [ia, c, n](Tape& t, const std::vector<double>& g) {
                    kn::axpy(c, g.data(), OpAccess::grad_for(t, ia), n);
                    fc::add(fc::elementwise(2 * static_cast<fc::u64>(n)));
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    if (a.ndim() < 2 || b.ndim() < 2)
        throw ShapeError("matmul: operands must be at least 2-D, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));

    const i64 m = a.size(-2);
    const i64 k = a.size(-1);
    const i64 kb = b.size(-2);
    const i64 n = b.size(-1);
    if (k != kb)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));

    const bool b_shared = b.ndim() == 2 ? true : false;
    if (!b_shared) {
        if (a.ndim() != b.ndim() ||
            !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()))
            throw ShapeError("matmul: leading batch dims disagree, " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }

    Shape out_shape(a.shape());
    out_shape.back() = n;
    const i64 nb = a.numel() / (m * k);  // total batch slices (1 when 2-D)
    std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
    if (b_shared)
        kn::mm_nn(a.data(), b.data(), out.data(), nb * m, k, n, false);
    else
        kn::bmm_nn(a.data(), b.data(), out.data(), nb, m, k, n, k * n, false);
    fc::add(fc::matmul(static_cast<fc::u64>(nb * m), static_cast<fc::u64>(k),
                       static_cast<fc::u64>(n)));

    Tensor res = Tensor::from_data(std::move(out_shape), std::move(out));
    if (Tape* tp = g_active_tape) {
        const int ia = OpAccess::input_id(*tp, a);
        const int ib = OpAccess::input_id(*tp, b);
        if (ia >= 0 || ib >= 0) {
            Tensor av = a;
            Tensor bv = b;
            const int node = OpAccess::record(
                *tp, res.shape(),
                [ia, ib, av, bv, b_shared, nb, m, k, n](Tape& t, const std::vector<double>& g) {
                    if (ia >= 0) {
                        // dA = G * B^T
                        std::vector<double> bt(static_cast<std::size_t>(bv.numel()));
                        double* da = OpAccess::grad_for(t, ia);
                        if (b_shared) {
                            kn::transpose_2d(bv.data(), bt.data(), k, n);
                            kn::mm_nn(g.data(), bt.data(), da, nb * m, n, k, true);
                        } else {
                            kn::transpose_last2(bv.data(), bt.data(), nb, k, n);
                            kn::bmm_nn(g.data(), bt.data(), da, nb, m, n, k, n * k, true);
                        }
                        fc::add(fc::matmul(static_cast<fc::u64>(nb * m), static_cast<fc::u64>(n),
                                           static_cast<fc::u64>(k)));
                    }
                    if (ib >= 0) {
                        // dB = A^T * G
                        double* db = OpAccess::grad_for(t, ib);
                        if (b_shared)
                            kn::mm_tn(av.data(), g.data(), db, nb * m, k, n, true);
                        else
                            kn::bmm_tn(av.data(), g.data(), db, nb, m, k, n, true);
                        fc::add(fc::matmul(static_cast<fc::u64>(nb * m), static_cast<fc::u64>(k),
                                           static_cast<fc::u64>(n)));
                    }
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor transpose(const Tensor& a) {
    std::vector<int> perm(static_cast<std::size_t>(a.ndim()));
    for (int i = 0; i < a.ndim(); ++i) perm[static_cast<std::size_t>(i)] = i;
    if (a.ndim() < 2) throw ShapeError("transpose: need at least 2 dims");
    std::swap(perm[static_cast<std::size_t>(a.ndim() - 1)],
              perm[static_cast<std::size_t>(a.ndim() - 2)]);
    return transpose(a, perm);
}

Tensor transpose(const Tensor& a, std::vector<int> perm) {
    require_defined(a, "transpose");
    const int nd = a.ndim();
    if (static_cast<int>(perm.size()) != nd)
        throw ShapeError("transpose: permutation size mismatch for " + shape_str(a.shape()));
    std::vector<bool> seen(static_cast<std::size_t>(nd), false);
    for (int p : perm) {
        if (p < 0 || p >= nd || seen[static_cast<std::size_t>(p)])
            throw ShapeError("transpose: invalid permutation");
        seen[static_cast<std::size_t>(p)] = true;
    }

    Shape out_shape(static_cast<std::size_t>(nd));
    for (int i = 0; i < nd; ++i)
        out_shape[static_cast<std::size_t>(i)] = a.shape()[static_cast<std::size_t>(perm[i])];
    std::vector<double> out(static_cast<std::size_t>(a.numel()));

    // fast path: identity on leading dims, swap of the trailing two
    bool last2 = nd >= 2;
    for (int i = 0; i < nd - 2 && last2; ++i) last2 = perm[static_cast<std::size_t>(i)] == i;
    if (last2)
        last2 = perm[static_cast<std::size_t>(nd - 2)] == nd - 1 &&
                perm[static_cast<std::size_t>(nd - 1)] == nd - 2;
    if (last2) {
        const i64 rows = a.size(-2);
        const i64 cols = a.size(-1);
        kn::transpose_last2(a.data(), out.data(), a.numel() / (rows * cols), rows, cols);
    } else {
        permute_impl(a.data(), a.shape(), perm, out.data(), false);
    }

    Tensor res = Tensor::from_data(std::move(out_shape), std::move(out));
    if (Tape* tp = g_active_tape) {
        const int ia = OpAccess::input_id(*tp, a);
        if (ia >= 0) {
            const std::vector<int> inv = inverse_perm(perm);
            const Shape gshape = res.shape();
            const i64 n = res.numel();
            const int node = OpAccess::record(
                *tp, res.shape(), [ia, inv, gshape, n](Tape& t, const std::vector<double>& g) {
                    permute_impl(g.data(), gshape, inv, OpAccess::grad_for(t, ia), true);
                    fc::add(fc::elementwise(static_cast<fc::u64>(n)));
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor reshape(const Tensor& a, Shape shape) {
    require_defined(a, "reshape");
    check_shape(shape);
    if (numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
    Tensor res = Tensor::from_data(shape, a.copy_of_data());
    if (Tape* tp = g_active_tape) {
        const int ia = OpAccess::input_id(*tp, a);
        if (ia >= 0) {
            const i64 n = a.numel();
            const int node =
                OpAccess::record(*tp, res.shape(), [ia, n](Tape& t, const std::vector<double>& g) {
                    accum_grad(t, ia, g.data(), n);
                    fc::add(fc::elementwise(static_cast<fc::u64>(n)));
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor select(const Tensor& a, int axis, std::int64_t index) {
    require_defined(a, "select");
    const int nd = a.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw ShapeError("select: axis out of range");
    const i64 axis_n = a.shape()[static_cast<std::size_t>(axis)];
    if (index < 0 || index >= axis_n) throw IndexError("select: index out of range");

    i64 outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= a.shape()[static_cast<std::size_t>(i)];
    for (int i = axis + 1; i < nd; ++i) inner *= a.shape()[static_cast<std::size_t>(i)];

    Shape out_shape;
    for (int i = 0; i < nd; ++i)
        if (i != axis) out_shape.push_back(a.shape()[static_cast<std::size_t>(i)]);
    if (out_shape.empty()) out_shape = {1};

    std::vector<double> out(static_cast<std::size_t>(outer * inner));
    const double* src = a.data();
    for (i64 o = 0; o < outer; ++o)
        std::copy_n(src + (o * axis_n + index) * inner, inner, out.data() + o * inner);

    Tensor res = Tensor::from_data(std::move(out_shape), std::move(out));
    if (Tape* tp = g_active_tape) {
        const int ia = OpAccess::input_id(*tp, a);
        if (ia >= 0) {
            const int node = OpAccess::record(
                *tp, res.shape(),
                [ia, outer, inner, axis_n, index](Tape& t, const std::vector<double>& g) {
                    double* da = OpAccess::grad_for(t, ia);
                    for (i64 o = 0; o < outer; ++o) {
                        kn::serial::add_inplace(da + (o * axis_n + index) * inner,
                                                g.data() + o * inner, inner);
                    }
                    fc::add(fc::elementwise(static_cast<fc::u64>(outer * inner)));
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor prepend_token(const Tensor& x, const Tensor& token) {
    require_defined(x, "prepend_token");
    require_defined(token, "prepend_token");
    if (x.ndim() != 3) throw ShapeError("prepend_token: x must be [b,T,M], got " + shape_str(x.shape()));
    const i64 b = x.size(0), tokens = x.size(1), m = x.size(2);
    if (token.numel() != m)
        throw ShapeError("prepend_token: token numel " + std::to_string(token.numel()) +
                         " != feature dim " + std::to_string(m));

    std::vector<double> out(static_cast<std::size_t>(b * (tokens + 1) * m));
    const double* px = x.data();
    const double* pt = token.data();
    for (i64 i = 0; i < b; ++i) {
        double* row = out.data() + i * (tokens + 1) * m;
        std::copy_n(pt, m, row);
        std::copy_n(px + i * tokens * m, tokens * m, row + m);
    }

    Tensor res = Tensor::from_data({b, tokens + 1, m}, std::move(out));
    if (Tape* tp = g_active_tape) {
        const int ix = OpAccess::input_id(*tp, x);
        const int it = OpAccess::input_id(*tp, token);
        if (ix >= 0 || it >= 0) {
            const int node = OpAccess::record(
                *tp, res.shape(), [ix, it, b, tokens, m](Tape& t, const std::vector<double>& g) {
                    if (it >= 0) {
                        double* dt = OpAccess::grad_for(t, it);
                        for (i64 i = 0; i < b; ++i)
                            kn::serial::add_inplace(dt, g.data() + i * (tokens + 1) * m, m);
                        fc::add(fc::reduce(static_cast<fc::u64>(b * m)));
                    }
                    if (ix >= 0) {
                        double* dx = OpAccess::grad_for(t, ix);
                        for (i64 i = 0; i < b; ++i) {
                            kn::serial::add_inplace(dx + i * tokens * m,
                                                    g.data() + (i * (tokens + 1) + 1) * m,
                                                    tokens * m);
                        }
                        fc::add(fc::elementwise(static_cast<fc::u64>(b * tokens * m)));
                    }
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor softmax(const Tensor& x, int axis) {
    require_defined(x, "softmax");
    const int nd = x.ndim();
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd)
        throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));

    if (axis != nd - 1) {
        std::vector<int> perm(static_cast<std::size_t>(nd));
        for (int i = 0; i < nd; ++i) perm[static_cast<std::size_t>(i)] = i;
        std::swap(perm[static_cast<std::size_t>(axis)], perm[static_cast<std::size_t>(nd - 1)]);
        return transpose(softmax(transpose(x, perm), -1), perm);
    }

    const i64 cols = x.size(-1);
    const i64 rows = x.numel() / cols;
    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    if (!kn::softmax_rows(x.data(), out.data(), rows, cols))
        throw ValueError("softmax: input contains NaN");
    fc::add(fc::softmax(static_cast<fc::u64>(rows), static_cast<fc::u64>(cols)));

    Tensor res = Tensor::from_data(x.shape(), std::move(out));
    if (Tape* tp = g_active_tape) {
        const int ix = OpAccess::input_id(*tp, x);
        if (ix >= 0) {
            Tensor y = res;
            const int node = OpAccess::record(
                *tp, res.shape(), [ix, y, rows, cols](Tape& t, const std::vector<double>& g) {
                    kn::softmax_rows_bwd(y.data(), g.data(), OpAccess::grad_for(t, ix), rows, cols);
                    fc::add(fc::softmax_backward(static_cast<fc::u64>(rows),
                                                 static_cast<fc::u64>(cols)));
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_defined(x, "layernorm");
    require_defined(gain, "layernorm");
    require_defined(bias, "layernorm");
    const i64 cols = x.size(-1);
    if (gain.numel() != cols || bias.numel() != cols)
        throw ShapeError("layernorm: gain/bias must match last dim " + std::to_string(cols) +
                         ", got " + shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    const i64 rows = x.numel() / cols;

    std::vector<double> out(static_cast<std::size_t>(x.numel()));
    auto mean_save = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    auto rstd_save = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
    kn::layernorm_rows(x.data(), gain.data(), bias.data(), eps, out.data(), mean_save->data(),
                       rstd_save->data(), rows, cols);
    fc::add(fc::layernorm(static_cast<fc::u64>(rows), static_cast<fc::u64>(cols)));

    Tensor res = Tensor::from_data(x.shape(), std::move(out));
    if (Tape* tp = g_active_tape) {
        const int ix = OpAccess::input_id(*tp, x);
        const int ig = OpAccess::input_id(*tp, gain);
        const int ib = OpAccess::input_id(*tp, bias);
        if (ix >= 0 || ig >= 0 || ib >= 0) {
            Tensor xv = x;
            Tensor gv = gain;
            const int node = OpAccess::record(
                *tp, res.shape(),
                [ix, ig, ib, xv, gv, mean_save, rstd_save, rows,
                 cols](Tape& t, const std::vector<double>& g) {
                    double* dx = ix >= 0 ? OpAccess::grad_for(t, ix) : nullptr;
                    std::vector<double> dgain, dbias;
                    double* pg = nullptr;
                    double* pb = nullptr;
                    if (ig >= 0 || ib >= 0) {
                        dgain.assign(static_cast<std::size_t>(cols), 0.0);
                        dbias.assign(static_cast<std::size_t>(cols), 0.0);
                        pg = dgain.data();
                        pb = dbias.data();
                    }
                    kn::layernorm_rows_bwd(xv.data(), gv.data(), mean_save->data(),
                                           rstd_save->data(), g.data(), dx, pg, pb, rows, cols);
                    if (dx != nullptr)
                        fc::add(fc::layernorm_backward_dx(static_cast<fc::u64>(rows),
                                                          static_cast<fc::u64>(cols)));
                    if (pg != nullptr) {
                        fc::add(fc::layernorm_backward_affine(static_cast<fc::u64>(rows),
                                                              static_cast<fc::u64>(cols)));
                        if (ig >= 0) accum_grad(t, ig, pg, cols);
                        if (ib >= 0) accum_grad(t, ib, pb, cols);
                    }
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor gelu(const Tensor& x) {
    require_defined(x, "gelu");
    const i64 n = x.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    kn::gelu(x.data(), out.data(), n);
    fc::add(fc::gelu(static_cast<fc::u64>(n)));

    Tensor res = Tensor::from_data(x.shape(), std::move(out));
    if (Tape* tp = g_active_tape) {
        const int ix = OpAccess::input_id(*tp, x);
        if (ix >= 0) {
            Tensor xv = x;
            const int node =
                OpAccess::record(*tp, res.shape(), [ix, xv, n](Tape& t, const std::vector<double>& g) {
                    kn::gelu_bwd(xv.data(), g.data(), OpAccess::grad_for(t, ix), n);
                    fc::add(fc::gelu_backward(static_cast<fc::u64>(n)));
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    require_defined(logits, "cross_entropy");
    if (logits.ndim() != 2)
        throw ShapeError("cross_entropy: logits must be [batch, classes], got " +
                         shape_str(logits.shape()));
    const i64 b = logits.size(0);
    const i64 c = logits.size(1);
    if (static_cast<i64>(labels.size()) != b)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                         std::to_string(b));
    for (int y : labels) {
        if (y < 0 || y >= c)
            throw IndexError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                             std::to_string(c) + ")");
    }

    std::vector<double> row_loss(static_cast<std::size_t>(b));
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(b * c));
    kn::cross_entropy_rows(logits.data(), labels.data(), row_loss.data(), probs->data(), b, c);
    const double loss = kn::sum_all(row_loss.data(), b) / static_cast<double>(b);
    fc::add(fc::cross_entropy(static_cast<fc::u64>(b), static_cast<fc::u64>(c)));

    Tensor res = Tensor::scalar(loss);
    if (Tape* tp = g_active_tape) {
        const int il = OpAccess::input_id(*tp, logits);
        if (il >= 0) {
            auto labels_copy = std::make_shared<std::vector<int>>(labels);
            const int node = OpAccess::record(
                *tp, res.shape(),
                [il, probs, labels_copy, b, c](Tape& t, const std::vector<double>& g) {
                    const double gscale = g[0] / static_cast<double>(b);
                    double* dl = OpAccess::grad_for(t, il);
                    const double* p = probs->data();
                    for (i64 i = 0; i < b; ++i) {
                        const int y = (*labels_copy)[static_cast<std::size_t>(i)];
                        for (i64 j = 0; j < c; ++j)
                            dl[i * c + j] += gscale * (p[i * c + j] - (j == y ? 1.0 : 0.0));
                    }
                    fc::add(fc::cross_entropy_backward(static_cast<fc::u64>(b),
                                                       static_cast<fc::u64>(c)));
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor kl_div(const Tensor& p, const Tensor& q) {
    require_defined(p, "kl_div");
    require_defined(q, "kl_div");
    if (p.shape() != q.shape())
        throw ShapeError("kl_div: shapes disagree, " + shape_str(p.shape()) + " vs " +
                         shape_str(q.shape()));
    const i64 cols = p.size(-1);
    const i64 rows = p.numel() / cols;

    std::vector<double> row_kl(static_cast<std::size_t>(rows));
    kn::kl_rows(p.data(), q.data(), row_kl.data(), rows, cols);
    const double v = kn::sum_all(row_kl.data(), rows) / static_cast<double>(rows);
    fc::add(fc::kl_div(static_cast<fc::u64>(rows), static_cast<fc::u64>(cols)));

    Tensor res = Tensor::scalar(v);
    if (Tape* tp = g_active_tape) {
        const int ip = OpAccess::input_id(*tp, p);
        const int iq = OpAccess::input_id(*tp, q);
        if (ip >= 0 || iq >= 0) {
            Tensor pv = p;
            Tensor qv = q;
            const int node = OpAccess::record(
                *tp, res.shape(), [ip, iq, pv, qv, rows, cols](Tape& t, const std::vector<double>& g) {
                    const double gscale = g[0] / static_cast<double>(rows);
                    if (iq >= 0) {
                        kn::kl_rows_bwd_dq(pv.data(), qv.data(), gscale, OpAccess::grad_for(t, iq),
                                           rows, cols);
                        fc::add(fc::kl_div_backward_dq(static_cast<fc::u64>(rows),
                                                       static_cast<fc::u64>(cols)));
                    }
                    if (ip >= 0) {
                        kn::kl_rows_bwd_dp(pv.data(), qv.data(), gscale, OpAccess::grad_for(t, ip),
                                           rows, cols);
                        fc::add(fc::kl_div_backward_dp(static_cast<fc::u64>(rows),
                                                       static_cast<fc::u64>(cols)));
                    }
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor sum(const Tensor& x) {
    require_defined(x, "sum");
    const i64 n = x.numel();
    const double v = kn::sum_all(x.data(), n);
    fc::add(fc::reduce(static_cast<fc::u64>(n)));

    Tensor res = Tensor::scalar(v);
    if (Tape* tp = g_active_tape) {
        const int ix = OpAccess::input_id(*tp, x);
        if (ix >= 0) {
            const int node =
                OpAccess::record(*tp, res.shape(), [ix, n](Tape& t, const std::vector<double>& g) {
                    double* dx = OpAccess::grad_for(t, ix);
                    const double gv = g[0];
                    for (i64 i = 0; i < n; ++i) dx[i] += gv;
                    fc::add(fc::elementwise(static_cast<fc::u64>(n)));
                });
            OpAccess::link_output(*tp, res, node);
        }
    }
    return res;
}

Tensor mean(const Tensor& x) {
    require_defined(x, "mean");
    return scalar_mul(sum(x), 1.0 / static_cast<double>(x.numel()));
}

double rel_err(double a, double b) {
    const double scale = std::max({std::fabs(a), std::fabs(b), 1.0});
    return std::fabs(a - b) / scale;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
    if (eps <= 0.0) throw ContractError("grad_check: eps must be positive");
    require_defined(x, "grad_check");

    Tensor probe = x.trainable("__grad_check_x");
    Tape tape;
    Tensor autodiff_grad;
    {
        TapeScope scope(tape);
        Tensor loss = f(probe);
        if (loss.numel() != 1) throw ContractError("grad_check: f must be scalar-valued");
        if (OpAccess::on_tape(tape, loss)) {
            GradMap gm = tape.backward(loss);
            autodiff_grad =
                gm.contains("__grad_check_x") ? gm.at("__grad_check_x") : Tensor::zeros(x.shape());
        } else {
            // f never touched the probe: gradient is structurally zero
            autodiff_grad = Tensor::zeros(x.shape());
        }
    }

    const std::vector<double> base = x.copy_of_data();
    double max_err = 0.0;
    for (i64 i = 0; i < x.numel(); ++i) {
        std::vector<double> up = base;
        std::vector<double> dn = base;
        up[static_cast<std::size_t>(i)] += eps;
        dn[static_cast<std::size_t>(i)] -= eps;
        const double fp = f(Tensor::from_data(x.shape(), std::move(up))).item();
        const double fm = f(Tensor::from_data(x.shape(), std::move(dn))).item();
        const double fd = (fp - fm) / (2.0 * eps);
        max_err = std::max(max_err, rel_err(fd, autodiff_grad.at(i)));
    }
    return max_err;
}

}  // namespace clvit

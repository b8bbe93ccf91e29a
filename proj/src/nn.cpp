#include "vibefm/nn.hpp"

#include "vibefm/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace vibefm::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using CMapStrided = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using MapStrided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using CMapVec = Eigen::Map<const RowVec>;
using MapVec = Eigen::Map<RowVec>;

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

// dst[j] += sum_i src(i, j) in a fixed row order. Eigen's partial reductions pick
// packet or scalar paths by pointer alignment, which is not reproducible.
void add_column_sums(double* dst, const RowMat& src)
{
    const auto rows = static_cast<std::size_t>(src.rows());
    const auto cols = static_cast<std::size_t>(src.cols());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = src.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) dst[c] += row[c];
    }
}

void add_column_sums(double* dst, const double* src, std::size_t rows, std::size_t cols)
{
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c] += src[r * cols + c];
}

std::shared_ptr<Node> make_node(Tensor value, std::initializer_list<const Var*> inputs)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    for (const Var* in : inputs) {
        if (in->requires_grad()) {
            node->requires_grad = true;
            break;
        }
    }
    if (node->requires_grad)
        for (const Var* in : inputs) node->inputs.push_back(in->node());
    return node;
}

std::vector<double>* grad_of(Node& self, std::size_t i)
{
    Node& in = *self.inputs[i];
    return in.requires_grad ? &in.ensure_grad() : nullptr;
}

const Tensor& value_of(Node& self, std::size_t i) { return self.inputs[i]->value; }

void require(bool condition, const std::string& message)
{
    if (!condition) fail(ErrorCode::ShapeMismatch, message);
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

} // namespace

std::size_t numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape)
{
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
    return s + "]";
}

Tensor::Tensor(Shape shape_, std::vector<double> data_) : shape(std::move(shape_)), data(std::move(data_))
{
    require(numel(shape) == data.size(), "tensor data size does not match shape " + shape_string(shape));
}

std::vector<double>& Node::ensure_grad()
{
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
}

Var Var::constant(Tensor value)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(node);
}

Var Var::parameter(Tensor value)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    return Var(node);
}

std::span<const double> Var::grad() const
{
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
    return node_->grad;
}

bool all_finite(std::span<const double> values)
{
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// backward

void backward(std::span<const std::pair<Var, std::vector<double>>> seeds)
{
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    for (const auto& [root, seed] : seeds) {
        if (!root.requires_grad()) continue;
        if (seed.size() != root.size()) fail(ErrorCode::ShapeMismatch, "seed gradient size differs from root");
        Node* r = root.node().get();
        auto& g = r->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
        if (visited.insert(r).second) stack.emplace_back(r, 0);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                Node* child = node->inputs[next++].get();
                if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

void backward(const Var& root)
{
    std::vector<std::pair<Var, std::vector<double>>> seeds;
    seeds.emplace_back(root, std::vector<double>(root.size(), 1.0));
    backward(seeds);
}

// ---------------------------------------------------------------------------
// dense ops

Var matmul(const Var& x, const Var& w)
{
    require(w.shape().size() == 2, "matmul weight must be 2-D");
    const std::size_t k = w.shape()[0];
    const std::size_t n = w.shape()[1];
    require(!x.shape().empty() && x.shape().back() == k,
            "matmul shape mismatch " + shape_string(x.shape()) + " x " + shape_string(w.shape()));
    const std::size_t m = x.size() / k;
    Shape out_shape = x.shape();
    out_shape.back() = n;
    Tensor out(out_shape);
    MapMat(out.data.data(), idx(m), idx(n)).noalias() =
        CMapMat(x.value().data.data(), idx(m), idx(k)) * CMapMat(w.value().data.data(), idx(k), idx(n));
    auto node = make_node(std::move(out), {&x, &w});
    if (node->requires_grad) {
        node->backward = [m, k, n](Node& self) {
            CMapMat dy(self.grad.data(), idx(m), idx(n));
            if (auto* gx = grad_of(self, 0))
                MapMat(gx->data(), idx(m), idx(k)).noalias() +=
                    dy * CMapMat(value_of(self, 1).data.data(), idx(k), idx(n)).transpose();
            if (auto* gw = grad_of(self, 1))
                MapMat(gw->data(), idx(k), idx(n)).noalias() +=
                    CMapMat(value_of(self, 0).data.data(), idx(m), idx(k)).transpose() * dy;
        };
    }
    return Var(node);
}

Var add_bias(const Var& x, const Var& b)
{
    const std::size_t n = b.size();
    require(!x.shape().empty() && x.shape().back() == n, "bias width differs from last dimension");
    const std::size_t m = x.size() / n;
    Tensor out = x.value();
    MapMat(out.data.data(), idx(m), idx(n)).rowwise() += CMapVec(b.value().data.data(), idx(n));
    auto node = make_node(std::move(out), {&x, &b});
    if (node->requires_grad) {
        node->backward = [m, n](Node& self) {
            CMapMat dy(self.grad.data(), idx(m), idx(n));
            if (auto* gx = grad_of(self, 0)) MapMat(gx->data(), idx(m), idx(n)) += dy;
            if (auto* gb = grad_of(self, 1)) add_column_sums(gb->data(), self.grad.data(), m, n);
        };
    }
    return Var(node);
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_bias(matmul(x, w), b); }

Var add(const Var& a, const Var& b)
{
    require(a.shape() == b.shape(), "add shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.value().data[i];
    auto node = make_node(std::move(out), {&a, &b});
    if (node->requires_grad) {
        node->backward = [](Node& self) {
            for (std::size_t k = 0; k < 2; ++k)
                if (auto* g = grad_of(self, k))
                    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        };
    }
    return Var(node);
}

Var scale(const Var& x, double factor)
{
    Tensor out = x.value();
    for (double& v : out.data) v *= factor;
    auto node = make_node(std::move(out), {&x});
    if (node->requires_grad) {
        node->backward = [factor](Node& self) {
            auto* g = grad_of(self, 0);
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += factor * self.grad[i];
        };
    }
    return Var(node);
}

Var relu(const Var& x)
{
    Tensor out = x.value();
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    auto node = make_node(std::move(out), {&x});
    if (node->requires_grad) {
        node->backward = [](Node& self) {
            auto* g = grad_of(self, 0);
            const auto& y = self.value.data;
            for (std::size_t i = 0; i < g->size(); ++i)
                if (y[i] > 0.0) (*g)[i] += self.grad[i];
        };
    }
    return Var(node);
}

Var tanh(const Var& x)
{
    Tensor out = x.value();
    for (double& v : out.data) v = std::tanh(v);
    auto node = make_node(std::move(out), {&x});
    if (node->requires_grad) {
        node->backward = [](Node& self) {
            auto* g = grad_of(self, 0);
            const auto& y = self.value.data;
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * (1.0 - y[i] * y[i]);
        };
    }
    return Var(node);
}

// ---------------------------------------------------------------------------
// convolution

Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t kernel, std::size_t stride)
{
    require(x.shape().size() == 3, "conv1d input must be [N, L, Cin]");
    const std::size_t n = x.shape()[0];
    const std::size_t len = x.shape()[1];
    const std::size_t cin = x.shape()[2];
    require(w.shape().size() == 2 && w.shape()[0] == kernel * cin, "conv1d weight must be [K*Cin, Cout]");
    const std::size_t cout = w.shape()[1];
    require(b.size() == cout, "conv1d bias width mismatch");
    require(stride > 0 && len >= kernel, "conv1d input shorter than kernel");
    const std::size_t lout = (len - kernel) / stride + 1;

    Tensor out({n, lout, cout});
    CMapMat wm(w.value().data.data(), idx(kernel * cin), idx(cout));
    CMapVec bv(b.value().data.data(), idx(cout));
    for (std::size_t s = 0; s < n; ++s) {
        // Row l of the im2col matrix is the contiguous window starting at l*stride.
        CMapStrided cols(x.value().data.data() + s * len * cin, idx(lout), idx(kernel * cin),
                         Eigen::OuterStride<>(idx(stride * cin)));
        MapMat y(out.data.data() + s * lout * cout, idx(lout), idx(cout));
        y.noalias() = cols * wm;
        y.rowwise() += bv;
    }
    auto node = make_node(std::move(out), {&x, &w, &b});
    if (node->requires_grad) {
        node->backward = [n, len, cin, cout, lout, kernel, stride](Node& self) {
            const auto& xv = value_of(self, 0).data;
            CMapMat wm(value_of(self, 1).data.data(), idx(kernel * cin), idx(cout));
            auto* gx = grad_of(self, 0);
            auto* gw = grad_of(self, 1);
            auto* gb = grad_of(self, 2);
            RowMat dcols;
            for (std::size_t s = 0; s < n; ++s) {
                CMapMat dy(self.grad.data() + s * lout * cout, idx(lout), idx(cout));
                if (gw) {
                    CMapStrided cols(xv.data() + s * len * cin, idx(lout), idx(kernel * cin),
                                     Eigen::OuterStride<>(idx(stride * cin)));
                    MapMat(gw->data(), idx(kernel * cin), idx(cout)).noalias() += cols.transpose() * dy;
                }
                if (gb) add_column_sums(gb->data(), self.grad.data() + s * lout * cout, lout, cout);
                if (gx) {
                    dcols.noalias() = dy * wm.transpose();
                    double* base = gx->data() + s * len * cin;
                    for (std::size_t l = 0; l < lout; ++l) {
                        double* dst = base + l * stride * cin;
                        const double* src = dcols.data() + l * kernel * cin;
                        for (std::size_t j = 0; j < kernel * cin; ++j) dst[j] += src[j];
                    }
                }
            }
        };
    }
    return Var(node);
}

// ---------------------------------------------------------------------------
// GRU

Var gru(const Var& x, const Var& w_ih, const Var& w_hh, const Var& b_ih, const Var& b_hh)
{
    require(x.shape().size() == 3, "gru input must be [B, T, In]");
    const std::size_t batch = x.shape()[0];
    const std::size_t steps = x.shape()[1];
    const std::size_t in = x.shape()[2];
    require(w_hh.shape().size() == 2 && w_hh.shape()[1] == 3 * w_hh.shape()[0], "gru w_hh must be [H, 3H]");
    const std::size_t h = w_hh.shape()[0];
    const std::size_t g3 = 3 * h;
    require(w_ih.shape().size() == 2 && w_ih.shape()[0] == in && w_ih.shape()[1] == g3, "gru w_ih must be [In, 3H]");
    require(b_ih.size() == g3 && b_hh.size() == g3, "gru biases must be [3H]");

    // Input projections for every step at once: rows b*T + t.
    RowMat xg = CMapMat(x.value().data.data(), idx(batch * steps), idx(in)) *
                CMapMat(w_ih.value().data.data(), idx(in), idx(g3));
    xg.rowwise() += CMapVec(b_ih.value().data.data(), idx(g3));

    CMapMat whh(w_hh.value().data.data(), idx(h), idx(g3));
    CMapVec bhh(b_hh.value().data.data(), idx(g3));

    Tensor out({batch, steps, h});
    // Saved gate activations, laid out [T, B, H].
    std::vector<double> rs(steps * batch * h), zs(steps * batch * h), ns(steps * batch * h), hns(steps * batch * h);
    RowMat hprev = RowMat::Zero(idx(batch), idx(h));
    RowMat hg(idx(batch), idx(g3));
    for (std::size_t t = 0; t < steps; ++t) {
        hg.noalias() = hprev * whh;
        hg.rowwise() += bhh;
        for (std::size_t b = 0; b < batch; ++b) {
            const double* xr = xg.data() + (b * steps + t) * g3;
            const double* hr = hg.data() + b * g3;
            double* hout = out.data.data() + (b * steps + t) * h;
            const std::size_t o = (t * batch + b) * h;
            for (std::size_t j = 0; j < h; ++j) {
                const double r = sigmoid(xr[j] + hr[j]);
                const double z = sigmoid(xr[h + j] + hr[h + j]);
                const double nn = std::tanh(xr[2 * h + j] + r * hr[2 * h + j]);
                const double hp = hprev(idx(b), idx(j));
                const double hv = (1.0 - z) * nn + z * hp;
                rs[o + j] = r;
                zs[o + j] = z;
                ns[o + j] = nn;
                hns[o + j] = hr[2 * h + j];
                hout[j] = hv;
            }
        }
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < h; ++j) hprev(idx(b), idx(j)) = out.data[(b * steps + t) * h + j];
    }

    auto node = make_node(std::move(out), {&x, &w_ih, &w_hh, &b_ih, &b_hh});
    if (node->requires_grad) {
        node->backward = [batch, steps, in, h, g3, rs = std::move(rs), zs = std::move(zs), ns = std::move(ns),
                          hns = std::move(hns)](Node& self) {
            const auto& hall = self.value.data;
            CMapMat whh(value_of(self, 2).data.data(), idx(h), idx(g3));
            RowMat dxg(idx(batch * steps), idx(g3));
            RowMat dhg(idx(batch), idx(g3));
            RowMat dh_carry = RowMat::Zero(idx(batch), idx(h));
            RowMat hprev(idx(batch), idx(h));
            auto* gwhh = grad_of(self, 2);
            auto* gbhh = grad_of(self, 4);
            for (std::size_t tt = steps; tt-- > 0;) {
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t j = 0; j < h; ++j)
                        hprev(idx(b), idx(j)) = tt == 0 ? 0.0 : hall[(b * steps + tt - 1) * h + j];
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t o = (tt * batch + b) * h;
                    double* dx_row = dxg.data() + (b * steps + tt) * g3;
                    double* dh_row = dhg.data() + b * g3;
                    for (std::size_t j = 0; j < h; ++j) {
                        const double dh = self.grad[(b * steps + tt) * h + j] + dh_carry(idx(b), idx(j));
                        const double r = rs[o + j];
                        const double z = zs[o + j];
                        const double nn = ns[o + j];
                        const double hp = hprev(idx(b), idx(j));
                        const double dn_pre = dh * (1.0 - z) * (1.0 - nn * nn);
                        const double dz_pre = dh * (hp - nn) * z * (1.0 - z);
                        const double dr_pre = dn_pre * hns[o + j] * r * (1.0 - r);
                        dx_row[j] = dr_pre;
                        dx_row[h + j] = dz_pre;
                        dx_row[2 * h + j] = dn_pre;
                        dh_row[j] = dr_pre;
                        dh_row[h + j] = dz_pre;
                        dh_row[2 * h + j] = dn_pre * r;
                        dh_carry(idx(b), idx(j)) = dh * z;
                    }
                }
                if (gwhh) MapMat(gwhh->data(), idx(h), idx(g3)).noalias() += hprev.transpose() * dhg;
                if (gbhh) add_column_sums(gbhh->data(), dhg);
                dh_carry.noalias() += dhg * whh.transpose();
            }
            if (auto* gx = grad_of(self, 0))
                MapMat(gx->data(), idx(batch * steps), idx(in)).noalias() +=
                    dxg * CMapMat(value_of(self, 1).data.data(), idx(in), idx(g3)).transpose();
            if (auto* gwih = grad_of(self, 1))
                MapMat(gwih->data(), idx(in), idx(g3)).noalias() +=
                    CMapMat(value_of(self, 0).data.data(), idx(batch * steps), idx(in)).transpose() * dxg;
            if (auto* gbih = grad_of(self, 3)) add_column_sums(gbih->data(), dxg);
        };
    }
    return Var(node);
}

// ---------------------------------------------------------------------------
// normalization / attention helpers

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps)
{
    const std::size_t d = gamma.size();
    require(!x.shape().empty() && x.shape().back() == d && beta.size() == d, "layer_norm width mismatch");
    const std::size_t rows = x.size() / d;
    Tensor out(x.shape());
    std::vector<double> xhat(x.size());
    std::vector<double> inv_std(rows);
    const auto& xv = x.value().data;
    const auto& gv = gamma.value().data;
    const auto& bv = beta.value().data;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (row[j] - mean) * inv_std[r];
            xhat[r * d + j] = xh;
            out.data[r * d + j] = xh * gv[j] + bv[j];
        }
    }
    auto node = make_node(std::move(out), {&x, &gamma, &beta});
    if (node->requires_grad) {
        node->backward = [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
            const auto& gv = value_of(self, 1).data;
            auto* gx = grad_of(self, 0);
            auto* gg = grad_of(self, 1);
            auto* gb = grad_of(self, 2);
            std::vector<double> dxh(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* dy = self.grad.data() + r * d;
                const double* xh = xhat.data() + r * d;
                double sum_dxh = 0.0;
                double sum_dxh_xh = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    if (gg) (*gg)[j] += dy[j] * xh[j];
                    if (gb) (*gb)[j] += dy[j];
                    dxh[j] = dy[j] * gv[j];
                    sum_dxh += dxh[j];
                    sum_dxh_xh += dxh[j] * xh[j];
                }
                if (gx) {
                    const double dd = static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j)
                        (*gx)[r * d + j] += inv_std[r] / dd * (dd * dxh[j] - sum_dxh - xh[j] * sum_dxh_xh);
                }
            }
        };
    }
    return Var(node);
}

Var softmax(const Var& x)
{
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.size() / d;
    Tensor out = x.value();
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = out.data.data() + r * d;
        const double mx = *std::max_element(row, row + d);
        double sum = 0.0;
        for (std::size_t j = 0; j < d; ++j) sum += (row[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < d; ++j) row[j] /= sum;
    }
    auto node = make_node(std::move(out), {&x});
    if (node->requires_grad) {
        node->backward = [rows, d](Node& self) {
            auto* g = grad_of(self, 0);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = self.value.data.data() + r * d;
                const double* dy = self.grad.data() + r * d;
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += dy[j] * y[j];
                for (std::size_t j = 0; j < d; ++j) (*g)[r * d + j] += y[j] * (dy[j] - dot);
            }
        };
    }
    return Var(node);
}

Var bmm(const Var& a, const Var& b, bool transpose_b)
{
    require(a.shape().size() == 3 && b.shape().size() == 3 && a.shape()[0] == b.shape()[0], "bmm needs [G,.,.] inputs");
    const std::size_t g = a.shape()[0];
    const std::size_t m = a.shape()[1];
    const std::size_t k = a.shape()[2];
    const std::size_t n = transpose_b ? b.shape()[1] : b.shape()[2];
    require((transpose_b ? b.shape()[2] : b.shape()[1]) == k, "bmm inner dimension mismatch");
    Tensor out({g, m, n});
    for (std::size_t i = 0; i < g; ++i) {
        CMapMat am(a.value().data.data() + i * m * k, idx(m), idx(k));
        MapMat om(out.data.data() + i * m * n, idx(m), idx(n));
        if (transpose_b)
            om.noalias() = am * CMapMat(b.value().data.data() + i * n * k, idx(n), idx(k)).transpose();
        else
            om.noalias() = am * CMapMat(b.value().data.data() + i * k * n, idx(k), idx(n));
    }
    auto node = make_node(std::move(out), {&a, &b});
    if (node->requires_grad) {
        node->backward = [g, m, k, n, transpose_b](Node& self) {
            auto* ga = grad_of(self, 0);
            auto* gb = grad_of(self, 1);
            const auto& av = value_of(self, 0).data;
            const auto& bv = value_of(self, 1).data;
            for (std::size_t i = 0; i < g; ++i) {
                CMapMat dy(self.grad.data() + i * m * n, idx(m), idx(n));
                CMapMat am(av.data() + i * m * k, idx(m), idx(k));
                if (transpose_b) {
                    CMapMat bm(bv.data() + i * n * k, idx(n), idx(k));
                    if (ga) MapMat(ga->data() + i * m * k, idx(m), idx(k)).noalias() += dy * bm;
                    if (gb) MapMat(gb->data() + i * n * k, idx(n), idx(k)).noalias() += dy.transpose() * am;
                } else {
                    CMapMat bm(bv.data() + i * k * n, idx(k), idx(n));
                    if (ga) MapMat(ga->data() + i * m * k, idx(m), idx(k)).noalias() += dy * bm.transpose();
                    if (gb) MapMat(gb->data() + i * k * n, idx(k), idx(n)).noalias() += am.transpose() * dy;
                }
            }
        };
    }
    return Var(node);
}

Var gather(const Var& x, std::size_t items, Index index, Shape out_shape)
{
    require(items > 0 && x.size() % items == 0, "gather item count does not divide the input");
    const std::size_t in_item = x.size() / items;
    const std::size_t out_item = index->size();
    require(numel(out_shape) == items * out_item, "gather index count does not match output shape");
    for (std::int64_t i : *index) require(i < static_cast<std::int64_t>(in_item), "gather index out of range");
    Tensor out(std::move(out_shape));
    const auto& xv = x.value().data;
    const auto& ix = *index;
    for (std::size_t b = 0; b < items; ++b) {
        const double* src = xv.data() + b * in_item;
        double* dst = out.data.data() + b * out_item;
        for (std::size_t i = 0; i < out_item; ++i)
            if (ix[i] >= 0) dst[i] = src[ix[i]];
    }
    auto node = make_node(std::move(out), {&x});
    if (node->requires_grad) {
        node->backward = [items, in_item, out_item, index = std::move(index)](Node& self) {
            auto* g = grad_of(self, 0);
            const auto& ix = *index;
            for (std::size_t b = 0; b < items; ++b) {
                double* dst = g->data() + b * in_item;
                const double* src = self.grad.data() + b * out_item;
                for (std::size_t i = 0; i < out_item; ++i)
                    if (ix[i] >= 0) dst[ix[i]] += src[i];
            }
        };
    }
    return Var(node);
}

Var reshape(const Var& x, Shape shape)
{
    require(numel(shape) == x.size(), "reshape to " + shape_string(shape) + " changes element count");
    Tensor out(std::move(shape), x.value().data);
    auto node = make_node(std::move(out), {&x});
    if (node->requires_grad) {
        node->backward = [](Node& self) {
            auto* g = grad_of(self, 0);
            for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
        };
    }
    return Var(node);
}

Var concat_last(std::span<const Var> parts)
{
    require(!parts.empty(), "concat of nothing");
    const Shape& first = parts[0].shape();
    const std::size_t rows = parts[0].size() / first.back();
    std::vector<std::size_t> widths;
    std::size_t total = 0;
    for (const auto& p : parts) {
        require(p.shape().size() == first.size() && p.size() / p.shape().back() == rows, "concat leading dims differ");
        widths.push_back(p.shape().back());
        total += p.shape().back();
    }
    Shape out_shape = first;
    out_shape.back() = total;
    Tensor out(out_shape);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& v = parts[k].value().data;
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(v.data() + r * widths[k], widths[k], out.data.data() + r * total + offset);
        offset += widths[k];
    }
    auto node = std::make_shared<Node>();
    node->value = std::move(out);
    node->requires_grad = std::any_of(parts.begin(), parts.end(), [](const Var& p) { return p.requires_grad(); });
    if (node->requires_grad) {
        for (const auto& p : parts) node->inputs.push_back(p.node());
        node->backward = [rows, total, widths](Node& self) {
            std::size_t offset = 0;
            for (std::size_t k = 0; k < widths.size(); ++k) {
                if (auto* g = grad_of(self, k))
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                            (*g)[r * widths[k] + j] += self.grad[r * total + offset + j];
                offset += widths[k];
            }
        };
    }
    return Var(node);
}

Var slice_last(const Var& x, std::size_t begin, std::size_t end)
{
    const std::size_t d = x.shape().back();
    require(begin < end && end <= d, "slice bounds out of range");
    const std::size_t rows = x.size() / d;
    const std::size_t w = end - begin;
    Shape out_shape = x.shape();
    out_shape.back() = w;
    Tensor out(out_shape);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(x.value().data.data() + r * d + begin, w, out.data.data() + r * w);
    auto node = make_node(std::move(out), {&x});
    if (node->requires_grad) {
        node->backward = [rows, d, w, begin](Node& self) {
            auto* g = grad_of(self, 0);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < w; ++j) (*g)[r * d + begin + j] += self.grad[r * w + j];
        };
    }
    return Var(node);
}

Var mean_middle(const Var& x)
{
    require(x.shape().size() == 3, "mean_middle needs [B, T, D]");
    const std::size_t b = x.shape()[0];
    const std::size_t t = x.shape()[1];
    const std::size_t d = x.shape()[2];
    Tensor out({b, d});
    const double inv = 1.0 / static_cast<double>(t);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t s = 0; s < t; ++s)
            for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] += x.value().data[(i * t + s) * d + j] * inv;
    auto node = make_node(std::move(out), {&x});
    if (node->requires_grad) {
        node->backward = [b, t, d, inv](Node& self) {
            auto* g = grad_of(self, 0);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t s = 0; s < t; ++s)
                    for (std::size_t j = 0; j < d; ++j) (*g)[(i * t + s) * d + j] += self.grad[i * d + j] * inv;
        };
    }
    return Var(node);
}

Var add_window_mask(const Var& scores, const Tensor& mask, std::size_t heads)
{
    require(scores.shape().size() == 3 && mask.shape.size() == 3 && scores.shape()[1] == mask.shape[1] &&
                scores.shape()[2] == mask.shape[2],
            "window mask shape mismatch");
    const std::size_t g = scores.shape()[0];
    const std::size_t windows = mask.shape[0];
    const std::size_t nn = mask.shape[1] * mask.shape[2];
    Tensor out = scores.value();
    for (std::size_t i = 0; i < g; ++i) {
        const double* m = mask.data.data() + ((i / heads) % windows) * nn;
        double* o = out.data.data() + i * nn;
        for (std::size_t j = 0; j < nn; ++j) o[j] += m[j];
    }
    auto node = make_node(std::move(out), {&scores});
    if (node->requires_grad) {
        node->backward = [](Node& self) {
            auto* gs = grad_of(self, 0);
            for (std::size_t i = 0; i < gs->size(); ++i) (*gs)[i] += self.grad[i];
        };
    }
    return Var(node);
}

Var soft_cross_entropy(const Var& logits, const Tensor& targets)
{
    require(logits.shape().size() == 2 && targets.shape == logits.shape(), "cross-entropy shape mismatch");
    const std::size_t b = logits.shape()[0];
    const std::size_t c = logits.shape()[1];
    std::vector<double> probs(b * c);
    double loss = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        const double* z = logits.value().data.data() + i * c;
        const double mx = *std::max_element(z, z + c);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t j = 0; j < c; ++j) {
            probs[i * c + j] = std::exp(z[j] - lse);
            loss -= targets.data[i * c + j] * (z[j] - lse);
        }
    }
    loss /= static_cast<double>(b);
    auto node = make_node(Tensor(Shape{}, std::vector<double>{loss}), {&logits});
    if (node->requires_grad) {
        node->backward = [b, c, probs = std::move(probs), t = targets.data](Node& self) {
            auto* g = grad_of(self, 0);
            const double scale = self.grad[0] / static_cast<double>(b);
            for (std::size_t i = 0; i < b; ++i) {
                double mass = 0.0;
                for (std::size_t j = 0; j < c; ++j) mass += t[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    (*g)[i * c + j] += scale * (probs[i * c + j] * mass - t[i * c + j]);
            }
        };
    }
    return Var(node);
}

} // namespace vibefm::nn

/*
 Copyright 2026 maskkit contributors
 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      http://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <utility>
#include <vector>

#include "maskkit/losses.hpp"
#include "maskkit/roialign.hpp"
#include "maskkit/tensor.hpp"
#include "maskkit/threading.hpp"

namespace maskkit {

// ---------------------------------------------------------------------------
// plain tensor kernels (also used by graph-free code paths)

/// Convolution, stride 1, "same" padding (pad = kernel / 2). Weight layout is
/// [OC, IC, KH, KW].
inline Tensor conv2d(const Tensor& in, const Tensor& w, const Tensor& b) {
    const int IC = in.dim(0), H = in.dim(1), W = in.dim(2);
    const int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    if (w.dim(1) != IC || b.dim(0) != OC) throw std::invalid_argument("conv2d: shape mismatch");
    const int ph = KH / 2, pw = KW / 2;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    Tensor out({OC, H, W});
    // Each thread owns whole output channels, so results are bitwise
    // independent of the thread count.
    parallel_for(OC, [&](int oc_begin, int oc_end) {
    for (int oc = oc_begin; oc < oc_end; ++oc) {
        double* oplane = out.data() + oc * plane;
        for (std::size_t i = 0; i < plane; ++i) oplane[i] = b.at(oc);
        for (int ic = 0; ic < IC; ++ic) {
            const double* iplane = in.data() + ic * plane;
            for (int ky = 0; ky < KH; ++ky) {
                const int dy = ky - ph;
                const int ya = std::max(0, -dy), yb = std::min(H, H - dy);
                for (int kx = 0; kx < KW; ++kx) {
                    const int dx = kx - pw;
                    const int xa = std::max(0, -dx), xb = std::min(W, W - dx);
                    const double wv = w.at(oc, ic, ky, kx);
                    for (int y = ya; y < yb; ++y) {
                        const double* ir = iplane + static_cast<std::size_t>(y + dy) * W + dx;
                        double* orow = oplane + static_cast<std::size_t>(y) * W;
                        for (int x = xa; x < xb; ++x) orow[x] += wv * ir[x];
                    }
                }
            }
        }
    }
    });
    return out;
}

/// Gradients for conv2d; any of the outputs may be null to skip it.
inline void conv2d_backward(const Tensor& in, const Tensor& w, const Tensor& gout, Tensor* gin,
                            Tensor* gw, Tensor* gb) {
    const int IC = in.dim(0), H = in.dim(1), W = in.dim(2);
    const int OC = w.dim(0), KH = w.dim(2), KW = w.dim(3);
    const int ph = KH / 2, pw = KW / 2;
    const std::size_t plane = static_cast<std::size_t>(H) * W;
    if (gb)
        for (int oc = 0; oc < OC; ++oc) {
            const double* gp = gout.data() + oc * plane;
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
            gb->at(oc) += acc;
        }
    for (int oc = 0; oc < OC; ++oc) {
        const double* gplane = gout.data() + oc * plane;
        for (int ic = 0; ic < IC; ++ic) {
            const double* iplane = in.data() + ic * plane;
            double* giplane = gin ? gin->data() + ic * plane : nullptr;
            for (int ky = 0; ky < KH; ++ky) {
                const int dy = ky - ph;
                const int ya = std::max(0, -dy), yb = std::min(H, H - dy);
                for (int kx = 0; kx < KW; ++kx) {
                    const int dx = kx - pw;
                    const int xa = std::max(0, -dx), xb = std::min(W, W - dx);
                    const double wv = w.at(oc, ic, ky, kx);
                    double wacc = 0.0;
                    for (int y = ya; y < yb; ++y) {
                        const double* gr = gplane + static_cast<std::size_t>(y) * W;
                        const double* ir = iplane + static_cast<std::size_t>(y + dy) * W + dx;
                        if (gw)
                            for (int x = xa; x < xb; ++x) wacc += gr[x] * ir[x];
                        if (giplane) {
                            double* gir = giplane + static_cast<std::size_t>(y + dy) * W + dx;
                            for (int x = xa; x < xb; ++x) gir[x] += wv * gr[x];
                        }
                    }
                    if (gw) gw->at(oc, ic, ky, kx) += wacc;
                }
            }
        }
    }
}

/// Transposed convolution, 4x4 kernel, stride 2, padding 1 (doubles H and W).
/// Weight layout is [IC, OC, 4, 4].
inline Tensor conv_transpose4x4s2(const Tensor& in, const Tensor& w, const Tensor& b) {
    const int IC = in.dim(0), H = in.dim(1), W = in.dim(2);
    if (w.dim(0) != IC || w.dim(2) != 4 || w.dim(3) != 4)
        throw std::invalid_argument("conv_transpose4x4s2: bad weight shape");
    const int OC = w.dim(1), OH = 2 * H, OW = 2 * W;
    Tensor out({OC, OH, OW});
    for (int oc = 0; oc < OC; ++oc) {
        double* op = out.data() + static_cast<std::size_t>(oc) * OH * OW;
        for (int i = 0; i < OH * OW; ++i) op[i] = b.at(oc);
    }
    for (int ic = 0; ic < IC; ++ic)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double v = in.at(ic, y, x);
                for (int oc = 0; oc < OC; ++oc)
                    for (int ky = 0; ky < 4; ++ky) {
                        const int oy = 2 * y + ky - 1;
                        if (oy < 0 || oy >= OH) continue;
                        for (int kx = 0; kx < 4; ++kx) {
                            const int ox = 2 * x + kx - 1;
                            if (ox < 0 || ox >= OW) continue;
                            out.at(oc, oy, ox) += v * w.at(ic, oc, ky, kx);
                        }
                    }
            }
    return out;
}

inline void conv_transpose4x4s2_backward(const Tensor& in, const Tensor& w, const Tensor& gout,
                                         Tensor* gin, Tensor* gw, Tensor* gb) {
    const int IC = in.dim(0), H = in.dim(1), W = in.dim(2);
    const int OC = w.dim(1), OH = 2 * H, OW = 2 * W;
    if (gb)
        for (int oc = 0; oc < OC; ++oc) {
            double acc = 0.0;
            const double* gp = gout.data() + static_cast<std::size_t>(oc) * OH * OW;
            for (int i = 0; i < OH * OW; ++i) acc += gp[i];
            gb->at(oc) += acc;
        }
    for (int ic = 0; ic < IC; ++ic)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                double gacc = 0.0;
                for (int oc = 0; oc < OC; ++oc)
                    for (int ky = 0; ky < 4; ++ky) {
                        const int oy = 2 * y + ky - 1;
                        if (oy < 0 || oy >= OH) continue;
                        for (int kx = 0; kx < 4; ++kx) {
                            const int ox = 2 * x + kx - 1;
                            if (ox < 0 || ox >= OW) continue;
                            const double g = gout.at(oc, oy, ox);
                            gacc += g * w.at(ic, oc, ky, kx);
                            if (gw) gw->at(ic, oc, ky, kx) += g * in.at(ic, y, x);
                        }
                    }
                if (gin) gin->at(ic, y, x) += gacc;
            }
}

/// 2x2 max pooling, stride 2, ceil mode. If argmax is given it receives the
/// flat input index chosen per output element (ties to the first scanned).
inline Tensor maxpool2_ceil(const Tensor& in, std::vector<std::size_t>* argmax = nullptr) {
    const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
    const int OH = (H + 1) / 2, OW = (W + 1) / 2;
    Tensor out({C, OH, OW});
    if (argmax) argmax->assign(static_cast<std::size_t>(C) * OH * OW, 0);
    std::size_t o = 0;
    for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < OH; ++oy)
            for (int ox = 0; ox < OW; ++ox, ++o) {
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_i = 0;
                for (int y = 2 * oy; y < std::min(2 * oy + 2, H); ++y)
                    for (int x = 2 * ox; x < std::min(2 * ox + 2, W); ++x) {
                        const std::size_t i = (static_cast<std::size_t>(c) * H + y) * W + x;
                        if (in[i] > best) {
                            best = in[i];
                            best_i = i;
                        }
                    }
                out[o] = best;
                if (argmax) (*argmax)[o] = best_i;
            }
    return out;
}

/// Nearest-neighbor 2x upsampling.
inline Tensor upsample_nearest2(const Tensor& in) {
    const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
    Tensor out({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y)
            for (int x = 0; x < 2 * W; ++x) out.at(c, y, x) = in.at(c, y / 2, x / 2);
    return out;
}

namespace detail {

// Half-pixel-center 2x bilinear taps with clamp-to-edge: output index o reads
// inputs lo/hi with weights (1-f)/f. Constant inputs stay constant.
struct Up2Tap {
    int lo, hi;
    double f;
};

inline Up2Tap up2_tap(int o, int n) {
    const double v = (o + 0.5) / 2.0 - 0.5;
    int lo = static_cast<int>(std::floor(v));
    double f = v - lo;
    int hi = lo + 1;
    if (lo < 0) {
        lo = 0;
        hi = 0;
        f = 0.0;
    } else if (hi > n - 1) {
        hi = n - 1;
        lo = n - 1;
        f = 0.0;
    }
    return {lo, hi, f};
}

} // namespace detail

/// Bilinear 2x upsampling, half-pixel centers, clamped at the edges.
inline Tensor bilinear_up2(const Tensor& in) {
    const int C = in.dim(0), H = in.dim(1), W = in.dim(2);
    Tensor out({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y) {
            const auto ty = detail::up2_tap(y, H);
            for (int x = 0; x < 2 * W; ++x) {
                const auto tx = detail::up2_tap(x, W);
                const double top = in.at(c, ty.lo, tx.lo) * (1 - tx.f) + in.at(c, ty.lo, tx.hi) * tx.f;
                const double bot = in.at(c, ty.hi, tx.lo) * (1 - tx.f) + in.at(c, ty.hi, tx.hi) * tx.f;
                out.at(c, y, x) = top * (1 - ty.f) + bot * ty.f;
            }
        }
    return out;
}

inline void bilinear_up2_backward(const Tensor& gout, Tensor& gin) {
    const int C = gin.dim(0), H = gin.dim(1), W = gin.dim(2);
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y) {
            const auto ty = detail::up2_tap(y, H);
            for (int x = 0; x < 2 * W; ++x) {
                const auto tx = detail::up2_tap(x, W);
                const double g = gout.at(c, y, x);
                gin.at(c, ty.lo, tx.lo) += g * (1 - ty.f) * (1 - tx.f);
                gin.at(c, ty.lo, tx.hi) += g * (1 - ty.f) * tx.f;
                gin.at(c, ty.hi, tx.lo) += g * ty.f * (1 - tx.f);
                gin.at(c, ty.hi, tx.hi) += g * ty.f * tx.f;
            }
        }
}

// ---------------------------------------------------------------------------
// reverse-mode graph

namespace ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// Eagerly evaluated graph node. `grad` exists (zeroed) iff requires_grad.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;
};

inline NodePtr constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

inline NodePtr param(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->grad = Tensor(n->value.shape());
    return n;
}

namespace detail {

inline NodePtr make_node(Tensor v, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->grad = Tensor(n->value.shape());
    return n;
}

} // namespace detail

/// Reverse sweep from a scalar root; accumulates into every reachable
/// requires_grad node. Each forward builds a fresh graph, so grads start zero.
inline void backward(const NodePtr& root) {
    if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    if (!root->requires_grad) return;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* n;
        std::size_t next;
    };
    std::vector<Frame> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

inline NodePtr conv2d_op(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
    NodePtr n = detail::make_node(conv2d(x->value, w->value, b->value), {x, w, b});
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& x = *self.parents[0];
            Node& w = *self.parents[1];
            Node& b = *self.parents[2];
            conv2d_backward(x.value, w.value, self.grad, x.requires_grad ? &x.grad : nullptr,
                            w.requires_grad ? &w.grad : nullptr,
                            b.requires_grad ? &b.grad : nullptr);
        };
    return n;
}

inline NodePtr conv_transpose_op(const NodePtr& x, const NodePtr& w, const NodePtr& b) {
    NodePtr n = detail::make_node(conv_transpose4x4s2(x->value, w->value, b->value), {x, w, b});
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& x = *self.parents[0];
            Node& w = *self.parents[1];
            Node& b = *self.parents[2];
            conv_transpose4x4s2_backward(x.value, w.value, self.grad,
                                         x.requires_grad ? &x.grad : nullptr,
                                         w.requires_grad ? &w.grad : nullptr,
                                         b.requires_grad ? &b.grad : nullptr);
        };
    return n;
}

inline NodePtr relu_op(const NodePtr& x) {
    Tensor v = x->value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::max(0.0, v[i]);
    NodePtr n = detail::make_node(std::move(v), {x});
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& x = *self.parents[0];
            if (!x.requires_grad) return;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (x.value[i] > 0.0) x.grad[i] += self.grad[i];
        };
    return n;
}

inline NodePtr maxpool2_op(const NodePtr& x) {
    auto argmax = std::make_shared<std::vector<std::size_t>>();
    NodePtr n = detail::make_node(maxpool2_ceil(x->value, argmax.get()), {x});
    if (n->requires_grad)
        n->backward_fn = [argmax](Node& self) {
            Node& x = *self.parents[0];
            if (!x.requires_grad) return;
            for (std::size_t o = 0; o < self.grad.size(); ++o) x.grad[(*argmax)[o]] += self.grad[o];
        };
    return n;
}

inline NodePtr upsample_nearest2_op(const NodePtr& x) {
    NodePtr n = detail::make_node(upsample_nearest2(x->value), {x});
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& x = *self.parents[0];
            if (!x.requires_grad) return;
            const int C = x.value.dim(0), H = x.value.dim(1), W = x.value.dim(2);
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < 2 * H; ++y)
                    for (int xx = 0; xx < 2 * W; ++xx)
                        x.grad.at(c, y / 2, xx / 2) += self.grad.at(c, y, xx);
        };
    return n;
}

inline NodePtr bilinear_up2_op(const NodePtr& x) {
    NodePtr n = detail::make_node(bilinear_up2(x->value), {x});
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            Node& x = *self.parents[0];
            if (x.requires_grad) bilinear_up2_backward(self.grad, x.grad);
        };
    return n;
}

inline NodePtr add_op(const NodePtr& a, const NodePtr& b) {
    if (!a->value.same_shape(b->value)) throw std::invalid_argument("add_op: shape mismatch");
    Tensor v = a->value;
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += b->value[i];
    NodePtr n = detail::make_node(std::move(v), {a, b});
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            for (int p = 0; p < 2; ++p) {
                Node& t = *self.parents[p];
                if (!t.requires_grad) continue;
                for (std::size_t i = 0; i < self.grad.size(); ++i) t.grad[i] += self.grad[i];
            }
        };
    return n;
}

inline NodePtr concat_channels_op(const std::vector<NodePtr>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels_op: empty input");
    const int H = xs[0]->value.dim(1), W = xs[0]->value.dim(2);
    int C = 0;
    for (const auto& x : xs) {
        if (x->value.dim(1) != H || x->value.dim(2) != W)
            throw std::invalid_argument("concat_channels_op: plane mismatch");
        C += x->value.dim(0);
    }
    Tensor v({C, H, W});
    std::size_t off = 0;
    for (const auto& x : xs) {
        std::copy(x->value.data(), x->value.data() + x->value.size(), v.data() + off);
        off += x->value.size();
    }
    NodePtr n = detail::make_node(std::move(v), xs);
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            std::size_t off = 0;
            for (const auto& p : self.parents) {
                if (p->requires_grad)
                    for (std::size_t i = 0; i < p->value.size(); ++i)
                        p->grad[i] += self.grad[off + i];
                off += p->value.size();
            }
        };
    return n;
}

/// Permutes a head output [A*comps, H, W] into a flat vector indexed
/// ((y*W + x)*A + a)*comps + d, matching anchor generation order in a level.
inline NodePtr anchor_flatten_op(const NodePtr& x, int num_anchors, int comps) {
    const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
    if (C != num_anchors * comps) throw std::invalid_argument("anchor_flatten_op: channel mismatch");
    Tensor v({H * W * C});
    for (int a = 0; a < num_anchors; ++a)
        for (int d = 0; d < comps; ++d)
            for (int y = 0; y < H; ++y)
                for (int xx = 0; xx < W; ++xx)
                    v[(static_cast<std::size_t>(y * W + xx) * num_anchors + a) * comps + d] =
                        x->value.at(a * comps + d, y, xx);
    NodePtr n = detail::make_node(std::move(v), {x});
    if (n->requires_grad)
        n->backward_fn = [num_anchors, comps, H, W](Node& self) {
            Node& x = *self.parents[0];
            if (!x.requires_grad) return;
            for (int a = 0; a < num_anchors; ++a)
                for (int d = 0; d < comps; ++d)
                    for (int y = 0; y < H; ++y)
                        for (int xx = 0; xx < W; ++xx)
                            x.grad.at(a * comps + d, y, xx) +=
                                self.grad[(static_cast<std::size_t>(y * W + xx) * num_anchors + a) *
                                              comps +
                                          d];
        };
    return n;
}

inline NodePtr concat_flat_op(const std::vector<NodePtr>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_flat_op: empty input");
    std::size_t total = 0;
    for (const auto& x : xs) total += x->value.size();
    Tensor v({static_cast<int>(total)});
    std::size_t off = 0;
    for (const auto& x : xs) {
        std::copy(x->value.data(), x->value.data() + x->value.size(), v.data() + off);
        off += x->value.size();
    }
    NodePtr n = detail::make_node(std::move(v), xs);
    if (n->requires_grad)
        n->backward_fn = [](Node& self) {
            std::size_t off = 0;
            for (const auto& p : self.parents) {
                if (p->requires_grad)
                    for (std::size_t i = 0; i < p->value.size(); ++i)
                        p->grad[i] += self.grad[off + i];
                off += p->value.size();
            }
        };
    return n;
}

/// Pools one RoI (image coordinates) from a feature node. The RoI itself is
/// fixed; gradients flow into the features only.
inline NodePtr roi_align_op(const NodePtr& features, int stride, const Box& roi, int out_size,
                            int sampling_ratio) {
    FeatureMap fm{features->value, stride};
    NodePtr n = detail::make_node(roi_align(fm, roi, out_size, sampling_ratio), {features});
    if (n->requires_grad)
        n->backward_fn = [roi, stride, sampling_ratio](Node& self) {
            Node& x = *self.parents[0];
            if (x.requires_grad)
                roi_align_backward(self.grad, roi, stride, sampling_ratio, x.grad);
        };
    return n;
}

/// Focal classification loss over flat logits; value is the scalar loss.
inline NodePtr focal_loss_op(const NodePtr& logits, const MatchResult& match,
                             const LossConfig& cfg) {
    std::vector<double> probs(logits->value.size());
    for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = logistic(logits->value[i]);
    ScalarLoss loss = focal_loss(probs, match, cfg);
    Tensor v({1});
    v[0] = loss.value;
    NodePtr n = detail::make_node(std::move(v), {logits});
    if (n->requires_grad) {
        auto g = std::make_shared<std::vector<double>>(std::move(loss.grad));
        n->backward_fn = [g](Node& self) {
            Node& x = *self.parents[0];
            if (!x.requires_grad) return;
            const double s = self.grad[0];
            for (std::size_t i = 0; i < g->size(); ++i) x.grad[i] += s * (*g)[i];
        };
    }
    return n;
}

/// Smooth-L1 box loss over flat per-anchor deltas [anchor*4 + comp]; targets
/// are given per positive anchor in ascending anchor order.
inline NodePtr smooth_l1_op(const NodePtr& deltas, const MatchResult& match,
                            const std::vector<BoxDelta>& targets, const LossConfig& cfg) {
    if (deltas->value.size() != match.size() * 4)
        throw std::invalid_argument("smooth_l1_op: deltas size mismatch");
    std::vector<std::size_t> pos;
    std::vector<BoxDelta> preds;
    for (std::size_t i = 0; i < match.size(); ++i)
        if (match.label[i] == AnchorLabel::positive) {
            pos.push_back(i);
            preds.push_back(BoxDelta{deltas->value[i * 4 + 0], deltas->value[i * 4 + 1],
                                     deltas->value[i * 4 + 2], deltas->value[i * 4 + 3]});
        }
    ScalarLoss loss = smooth_l1_loss(preds, targets, match, cfg);
    Tensor v({1});
    v[0] = loss.value;
    NodePtr n = detail::make_node(std::move(v), {deltas});
    if (n->requires_grad) {
        auto g = std::make_shared<std::vector<double>>(std::move(loss.grad));
        auto idx = std::make_shared<std::vector<std::size_t>>(std::move(pos));
        n->backward_fn = [g, idx](Node& self) {
            Node& x = *self.parents[0];
            if (!x.requires_grad) return;
            const double s = self.grad[0];
            for (std::size_t i = 0; i < idx->size(); ++i)
                for (int c = 0; c < 4; ++c) x.grad[(*idx)[i] * 4 + c] += s * (*g)[i * 4 + c];
        };
    }
    return n;
}

/// Keypoint cross-entropy over per-RoI mask logit nodes (each [K, m, m]).
inline NodePtr keypoint_ce_op(const std::vector<NodePtr>& masks,
                              const std::vector<std::vector<KeypointTarget>>& targets,
                              const LossConfig& cfg) {
    if (masks.empty()) {
        Tensor v({1});
        return constant(std::move(v));
    }
    std::vector<KeypointMask> logits;
    logits.reserve(masks.size());
    for (const auto& m : masks) {
        KeypointMask km(m->value.dim(0), m->value.dim(1));
        std::copy(m->value.data(), m->value.data() + m->value.size(), km.logits.begin());
        logits.push_back(std::move(km));
    }
    ScalarLoss loss = keypoint_ce_loss(logits, targets, cfg);
    Tensor v({1});
    v[0] = loss.value;
    NodePtr n = detail::make_node(std::move(v), masks);
    if (n->requires_grad) {
        auto g = std::make_shared<std::vector<double>>(std::move(loss.grad));
        n->backward_fn = [g](Node& self) {
            const double s = self.grad[0];
            std::size_t off = 0;
            for (const auto& p : self.parents) {
                if (p->requires_grad)
                    for (std::size_t i = 0; i < p->value.size(); ++i)
                        p->grad[i] += s * (*g)[off + i];
                off += p->value.size();
            }
        };
    }
    return n;
}

/// value = sum_i coeffs[i] * terms[i] over scalar nodes.
inline NodePtr weighted_sum_op(const std::vector<NodePtr>& terms,
                               const std::vector<double>& coeffs) {
    if (terms.size() != coeffs.size() || terms.empty())
        throw std::invalid_argument("weighted_sum_op: size mismatch");
    Tensor v({1});
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (terms[i]->value.size() != 1)
            throw std::invalid_argument("weighted_sum_op: terms must be scalar");
        v[0] += coeffs[i] * terms[i]->value[0];
    }
    NodePtr n = detail::make_node(std::move(v), terms);
    if (n->requires_grad) {
        auto c = std::make_shared<std::vector<double>>(coeffs);
        n->backward_fn = [c](Node& self) {
            for (std::size_t i = 0; i < self.parents.size(); ++i)
                if (self.parents[i]->requires_grad)
                    self.parents[i]->grad[0] += (*c)[i] * self.grad[0];
        };
    }
    return n;
}

} // namespace ad
} // namespace maskkit

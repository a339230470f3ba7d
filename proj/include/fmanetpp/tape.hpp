#pragma once

#include <deque>
#include <functional>
#include <optional>
#include <vector>

#include "fmanetpp/base.hpp"

namespace fmanet::ad {

class Tape;

struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;  // allocated on first accumulation
    bool requires_grad = false;
    bool keep = false;  // survive buffer freeing in backward (leaves, reported values)
    std::function<void()> back;
};

// Non-owning handle into a Tape.
class Var {
public:
    Var() = default;
    Var(Tape* t, Node* n) : tape_(t), node_(n) {}

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    const std::vector<double>& val() const { return node_->val; }
    std::vector<double>& val() { return node_->val; }
    const std::vector<double>& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    double scalar() const {
        if (node_->shape.numel() != 1) throw std::logic_error("Var::scalar on non-scalar");
        return node_->val[0];
    }
    Tensor tensor() const { return Tensor(node_->shape, node_->val); }

    Node* node() const { return node_; }
    Tape* tape() const { return tape_; }

private:
    Tape* tape_ = nullptr;
    Node* node_ = nullptr;
};

// Dynamic reverse-mode tape. Nodes are created in topological order by the
// forward pass; backward() walks them in reverse, freeing buffers as it goes
// unless a node is marked keep. One tape per thread; leaves copy their input
// so shared parameter storage is never written concurrently.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }
    void set_grad_enabled(bool e) { grad_enabled_ = e; }

    Node* alloc(Shape shape, bool requires_grad) {
        nodes_.emplace_back();
        Node& n = nodes_.back();
        n.shape = shape;
        n.val.resize(static_cast<size_t>(shape.numel()));
        n.requires_grad = requires_grad && grad_enabled_;
        return &n;
    }

    Var leaf(const Tensor& t, bool requires_grad) {
        Node* n = alloc(t.shape, requires_grad);
        n->val = t.v;
        n->keep = n->requires_grad;
        return Var(this, n);
    }
    Var leaf(Shape shape, const double* data, bool requires_grad) {
        Node* n = alloc(shape, requires_grad);
        std::copy(data, data + shape.numel(), n->val.begin());
        n->keep = n->requires_grad;
        return Var(this, n);
    }
    Var constant(const Tensor& t) { return leaf(t, false); }
    Var zeros(Shape shape, bool requires_grad = false) {
        Node* n = alloc(shape, requires_grad);
        n->keep = n->requires_grad;
        return Var(this, n);
    }

    // Backpropagate from a scalar loss. Frees value/grad buffers of
    // non-keep nodes once they can no longer be referenced.
    void backward(Var loss, bool free_buffers = true) {
        if (loss.tape() != this) throw std::logic_error("Tape::backward: foreign var");
        if (loss.shape().numel() != 1) throw std::invalid_argument("Tape::backward: loss must be scalar");
        if (!loss.node()->requires_grad) throw std::invalid_argument("Tape::backward: loss has no grad path");
        grad_of(loss.node()).assign(1, 1.0);
        bool seen_loss = false;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node& n = *it;
            if (&n == loss.node()) seen_loss = true;
            if (!seen_loss) continue;
            if (!n.grad.empty() && n.back) n.back();
            if (free_buffers && !n.keep) {
                std::vector<double>().swap(n.val);
                std::vector<double>().swap(n.grad);
                n.back = nullptr;
            }
        }
    }

    void clear() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

    static std::vector<double>& grad_of(Node* n) {
        if (n->grad.empty()) n->grad.assign(static_cast<size_t>(n->shape.numel()), 0.0);
        return n->grad;
    }

private:
    std::deque<Node> nodes_;
    bool grad_enabled_ = true;
};

// ---- elementwise ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var relu(Var a);
Var lrelu(Var a, double slope = 0.1);
Var sigmoid(Var a);
Var gelu(Var a);
Var sqr(Var a);

// ---- structure ----
Var concat_last(const std::vector<Var>& xs);
Var concat_rows(const std::vector<Var>& xs);
Var slice_last(Var a, int c0, int c1);
Var reshape(Var a, Shape s);
Var gather_rows(Var a, const std::vector<int>& rows);
Var pixel_shuffle(Var a, int r);
Var bilinear_upsample(Var a, int s);
// {H,W,T*J} <-> {T,H,W,J} channel-major temporal regrouping
Var split_temporal(Var a, int t);
Var merge_temporal(Var a);

// ---- reductions / losses ----
Var sum(Var a);
Var mean_all(Var a);
Var l1(Var a, Var b);
Var dot_const(Var a, const Tensor& w);
Var mean_hw(Var a);
Var add_many(const std::vector<Var>& xs);  // scalar accumulation

// ---- linear algebra / NN ----
Var matmul(Var a, Var b, bool ta = false, bool tb = false);
Var linear(Var x, Var w, Var b = Var());
Var conv2d(Var x, Var w, Var b, int stride, int pad);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6);
Var softmax_rows(Var x);
Var softmax_rows_scaled(Var x, double scale);  // softmax(x * scale) per row
Var rows_logsumexp_masked(Var x, const std::vector<unsigned char>& mask);
Var channel_affine(Var x, Var alpha, Var beta);
Var l2_normalize_rows(Var x, double eps = 1e-12);

}  // namespace fmanet::ad

#include "dasr/tape.hpp"

#include <algorithm>

namespace dasr {

namespace {

template <class T>
Tape<T>*& active_slot() {
    thread_local Tape<T>* slot = nullptr;
    return slot;
}

}  // namespace

template <class T>
Tape<T>::Scope::Scope(Tape& tape)
    : previous_(active_slot<T>()) {
    active_slot<T>() = &tape;
}

template <class T>
Tape<T>::Scope::~Scope() {
    active_slot<T>() = previous_;
}

template <class T>
Tape<T>::~Tape() {
    if (active_slot<T>() == this) active_slot<T>() = nullptr;
}

template <class T>
Tape<T>* Tape<T>::active() noexcept {
    return active_slot<T>();
}

template <class T>
Tape<T>* Tape<T>::recording_for(std::initializer_list<const Tensor<T>*> inputs) {
    Tape* tape = active();
    if (tape == nullptr) return nullptr;
    bool needed = false;
    for (const Tensor<T>* t : inputs) {
        if (t == nullptr || t->empty()) continue;
        if (t->traced()) {
            if (t->tape() != tape) throw Error("operation mixes tensors traced on different tapes");
            if (t->tape_epoch_ != tape->epoch_) throw Error("tensor was traced before the tape was reset");
            needed = true;
        } else if (t->requires_grad()) {
            needed = true;
        }
    }
    return needed ? tape : nullptr;
}

template <class T>
int Tape<T>::new_node(const Shape& shape) {
    nodes_.push_back(Node{shape, {}, nullptr});
    return static_cast<int>(nodes_.size()) - 1;
}

template <class T>
int Tape<T>::node_for(const Tensor<T>& t) {
    if (t.empty()) return -1;
    if (t.traced()) {
        if (t.tape_ != this) throw Error("tensor is traced on a different tape");
        if (t.tape_epoch_ != epoch_) throw Error("tensor was traced before the tape was reset");
        return t.node_;
    }
    if (!t.requires_grad()) return -1;
    const void* key = t.data_.get();
    if (auto it = leaves_.find(key); it != leaves_.end()) return it->second;
    const int id = new_node(t.shape());
    nodes_[id].leaf_grad = t.grad_;
    leaves_.emplace(key, id);
    return id;
}

template <class T>
Tensor<T> Tape<T>::record(std::string op, Shape shape, std::vector<T> values, std::vector<int> inputs,
                          BackwardFn backward) {
    Tensor<T> out(shape, std::move(values));
    const int id = new_node(shape);
    out.tape_ = this;
    out.node_ = id;
    out.tape_epoch_ = epoch_;
    records_.push_back(Record{std::move(op), std::move(inputs), id, std::move(backward)});
    return out;
}

template <class T>
std::vector<T>& Tape<T>::grad_buffer(int node) {
    Node& n = nodes_.at(static_cast<std::size_t>(node));
    if (n.grad.empty()) n.grad.assign(n.shape.numel(), T(0));
    return n.grad;
}

template <class T>
void Tape<T>::accumulate(int node, std::span<const T> g) {
    if (node < 0) return;
    auto& buf = grad_buffer(node);
    if (buf.size() != g.size()) throw ShapeError("gradient size mismatch during backward");
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

template <class T>
void Tape<T>::backward(const Tensor<T>& loss) {
    if (!loss.traced() || loss.tape_ != this || loss.tape_epoch_ != epoch_) {
        throw Error("backward: loss is not traced on this tape");
    }
    if (loss.numel() != 1) throw ShapeError("backward: loss must be a scalar, got " + loss.shape().str());

    grad_buffer(loss.node_)[0] = T(1);
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        const auto& g = nodes_[static_cast<std::size_t>(it->output)].grad;
        if (g.empty()) continue;
        it->backward(std::span<const T>(g.data(), g.size()), *this);
    }
    for (auto& node : nodes_) {
        if (!node.leaf_grad) continue;
        if (node.grad.empty()) {
            node.leaf_grad->assign(node.shape.numel(), T(0));
        } else {
            *node.leaf_grad = std::move(node.grad);
        }
    }
    reset();
}

template <class T>
void Tape<T>::reset() {
    nodes_.clear();
    records_.clear();
    leaves_.clear();
    ++epoch_;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace dasr

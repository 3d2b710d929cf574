#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dasr {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

// (batch, channels, height, width)
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t numel() const noexcept {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

template <class T>
class Tape;

/// Dense NCHW tensor. Storage is shared between copies; operations never
/// mutate their inputs. A tensor that requires grad owns a shared grad
/// buffer that backward() fills in.
template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0));
    Tensor(Shape shape, std::vector<T> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t numel() const noexcept { return shape_.numel(); }
    bool empty() const noexcept { return data_ == nullptr; }

    std::span<const T> values() const noexcept;
    const T* data() const noexcept { return data_ ? data_->data() : nullptr; }
    // Writes through to every copy sharing this storage. Reserved for
    // builders and optimizers; never call on a tensor a live tape holds.
    std::span<T> mutable_values() noexcept;

    std::size_t index(int n, int c, int h, int w) const noexcept {
        return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) * shape_.w + w;
    }
    T operator()(int n, int c, int h, int w) const { return (*data_)[index(n, c, h, w)]; }
    T item() const;

    bool requires_grad() const noexcept { return requires_grad_; }
    Tensor& set_requires_grad(bool on);
    bool has_grad() const noexcept { return grad_ && !grad_->empty(); }
    std::span<const T> grad() const noexcept;
    void zero_grad();

    bool traced() const noexcept { return tape_ != nullptr; }
    int node() const noexcept { return node_; }
    const Tape<T>* tape() const noexcept { return tape_; }

    // Same storage, no tape, no grad requirement.
    Tensor detach() const;
    // Deep copy of the values; untraced.
    Tensor clone() const;
    bool shares_storage(const Tensor& other) const noexcept { return data_ == other.data_; }

    template <class U>
    Tensor<U> cast() const;

private:
    friend class Tape<T>;

    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    std::shared_ptr<std::vector<T>> grad_;
    bool requires_grad_ = false;
    Tape<T>* tape_ = nullptr;
    int node_ = -1;
    unsigned tape_epoch_ = 0;
};

template <class T>
template <class U>
Tensor<U> Tensor<T>::cast() const {
    std::vector<U> out(numel());
    const auto src = values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return Tensor<U>(shape_, std::move(out));
}

void check_shape(const Shape& shape, const char* what);

// Concatenates (1,C,H,W) tensors along the batch axis. Untraced.
template <class T>
Tensor<T> stack(std::span<const Tensor<T>> items);

// Extracts sample n as a (1,C,H,W) tensor. Untraced.
template <class T>
Tensor<T> batch_item(const Tensor<T>& t, int n);

template <class T>
Tensor<T> clamp01(const Tensor<T>& t);

template <class T>
Tensor<T> flip_horizontal(const Tensor<T>& t);

bool bitwise_equal(const Tensor<float>& a, const Tensor<float>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace dasr

#include "dasr/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

namespace dasr {

std::string Shape::str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
}

void check_shape(const Shape& shape, const char* what) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
        throw ShapeError(std::string(what) + ": negative extent in shape " + shape.str());
    }
}

template <class T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(shape) {
    check_shape(shape, "Tensor");
    data_ = std::make_shared<std::vector<T>>(shape.numel(), fill);
}

template <class T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : shape_(shape) {
    check_shape(shape, "Tensor");
    if (values.size() != shape.numel()) {
        throw ShapeError("Tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                         shape.str());
    }
    data_ = std::make_shared<std::vector<T>>(std::move(values));
}

template <class T>
std::span<const T> Tensor<T>::values() const noexcept {
    if (!data_) return {};
    return {data_->data(), data_->size()};
}

template <class T>
std::span<T> Tensor<T>::mutable_values() noexcept {
    if (!data_) return {};
    return {data_->data(), data_->size()};
}

template <class T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item(): tensor of shape " + shape_.str() + " is not a scalar");
    return (*data_)[0];
}

template <class T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
    requires_grad_ = on;
    if (on && !grad_) grad_ = std::make_shared<std::vector<T>>();
    return *this;
}

template <class T>
std::span<const T> Tensor<T>::grad() const noexcept {
    if (!grad_) return {};
    return {grad_->data(), grad_->size()};
}

template <class T>
void Tensor<T>::zero_grad() {
    if (grad_) grad_->assign(numel(), T(0));
}

template <class T>
Tensor<T> Tensor<T>::detach() const {
    Tensor out;
    out.shape_ = shape_;
    out.data_ = data_;
    return out;
}

template <class T>
Tensor<T> Tensor<T>::clone() const {
    if (!data_) return Tensor();
    return Tensor(shape_, *data_);
}

template <class T>
Tensor<T> stack(std::span<const Tensor<T>> items) {
    if (items.empty()) throw ShapeError("stack: no tensors");
    Shape first = items.front().shape();
    Shape out_shape{0, first.c, first.h, first.w};
    for (const auto& t : items) {
        const auto& s = t.shape();
        if (s.c != first.c || s.h != first.h || s.w != first.w) {
            throw ShapeError("stack: shape " + s.str() + " does not match " + first.str());
        }
        out_shape.n += s.n;
    }
    std::vector<T> values;
    values.reserve(out_shape.numel());
    for (const auto& t : items) values.insert(values.end(), t.values().begin(), t.values().end());
    return Tensor<T>(out_shape, std::move(values));
}

template <class T>
Tensor<T> batch_item(const Tensor<T>& t, int n) {
    const Shape& s = t.shape();
    if (n < 0 || n >= s.n) throw ShapeError("batch_item: index " + std::to_string(n) + " out of range");
    const std::size_t per = static_cast<std::size_t>(s.c) * s.plane();
    auto begin = t.values().begin() + static_cast<std::ptrdiff_t>(per * n);
    return Tensor<T>({1, s.c, s.h, s.w}, std::vector<T>(begin, begin + static_cast<std::ptrdiff_t>(per)));
}

template <class T>
Tensor<T> clamp01(const Tensor<T>& t) {
    std::vector<T> out(t.values().begin(), t.values().end());
    for (auto& v : out) v = std::clamp(v, T(0), T(1));
    return Tensor<T>(t.shape(), std::move(out));
}

template <class T>
Tensor<T> flip_horizontal(const Tensor<T>& t) {
    const Shape& s = t.shape();
    std::vector<T> out(t.numel());
    const T* src = t.data();
    for (std::size_t row = 0; row < static_cast<std::size_t>(s.n) * s.c * s.h; ++row) {
        const T* in = src + row * s.w;
        T* o = out.data() + row * s.w;
        for (int x = 0; x < s.w; ++x) o[x] = in[s.w - 1 - x];
    }
    return Tensor<T>(s, std::move(out));
}

bool bitwise_equal(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data(), b.data(), a.numel() * sizeof(float)) == 0;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> stack(std::span<const Tensor<float>>);
template Tensor<double> stack(std::span<const Tensor<double>>);
template Tensor<float> batch_item(const Tensor<float>&, int);
template Tensor<double> batch_item(const Tensor<double>&, int);
template Tensor<float> clamp01(const Tensor<float>&);
template Tensor<double> clamp01(const Tensor<double>&);
template Tensor<float> flip_horizontal(const Tensor<float>&);
template Tensor<double> flip_horizontal(const Tensor<double>&);

}  // namespace dasr

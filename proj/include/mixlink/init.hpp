#ifndef MIXLINK_INIT_HPP
#define MIXLINK_INIT_HPP

#include <random>
#include <stdexcept>

#include "mixlink/tensor.hpp"

namespace mixlink {

/// He initialization: zero-mean normal with variance 2/fan_in. For a
/// convolution kernel fan_in = C * kh * kw, for a linear weight fan_in = C.
template <class T>
TensorPtrT<T> he_init(Shape shape, int fan_in, std::mt19937_64& rng) {
    if (fan_in <= 0) throw std::invalid_argument("he_init fan_in must be positive");
    auto t = TensorT<T>::make(shape);
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& v : t->data) v = static_cast<T>(dist(rng));
    return t;
}

inline TensorPtr he_init(Shape shape, int fan_in, std::mt19937_64& rng) {
    return he_init<double>(shape, fan_in, rng);
}

} // namespace mixlink

#endif

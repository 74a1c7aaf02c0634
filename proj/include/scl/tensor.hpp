#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace scl {

// Element type of every tensor. Training builds use float; the test-only
// double-precision build (SCL_DOUBLE_PRECISION) exists for tight finite-difference checks.
#ifdef SCL_DOUBLE_PRECISION
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::size_t>;

/// 64-byte aligned storage. Vectorised kernels peel differently depending on the
/// buffer address, so fixed alignment keeps results bitwise reproducible.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};
    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<Real, AlignedAllocator<Real>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float32 array. Value type; copies are deep.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = 0.0f);
    Tensor(Shape shape, const std::vector<Real>& data);
    Tensor(Shape shape, Buffer data);

    static Tensor from(std::initializer_list<std::size_t> shape, std::initializer_list<Real> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<Real> data() noexcept { return data_; }
    std::span<const Real> data() const noexcept { return data_; }
    Real* ptr() noexcept { return data_.data(); }
    const Real* ptr() const noexcept { return data_.data(); }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }
    Real item() const;

    /// Same data, new shape; element counts must agree.
    Tensor reshaped(Shape shape) const&;
    Tensor reshaped(Shape shape) &&;

    void fill(Real v);
    bool all_finite() const;

    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    Buffer data_;
};

}  // namespace scl

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <new>
#include <vector>

#include "actdiff/tensor.hpp"

namespace actdiff::detail {

// Every buffer starts on a 64-byte boundary. Eigen peels unaligned leading
// elements off vectorized reductions, so with malloc's 16-byte alignment the
// summation order (and the last bits of results) would vary from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using Buffer = std::vector<double, AlignedAllocator<double>>;

std::uint64_t next_sequence();

struct Node {
  Shape shape;
  Buffer value;
  Buffer grad;
  bool requires_grad = false;
  std::string op = "leaf";
  std::uint64_t seq = next_sequence();
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads self.grad, accumulates into inputs' grads.
  std::function<void(Node& self)> backward;

  Buffer& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace actdiff::detail

// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace stereodet {

/// Number of threads the OpenMP kernels will use for the next region.
int num_threads();
int max_threads();
void set_num_threads(int n);

/// Restores the previous thread count on scope exit.
class ScopedThreads {
 public:
  explicit ScopedThreads(int n) : previous_(num_threads()) { set_num_threads(n); }
  ~ScopedThreads() { set_num_threads(previous_); }
  ScopedThreads(const ScopedThreads&) = delete;
  ScopedThreads& operator=(const ScopedThreads&) = delete;

 private:
  int previous_;
};

}  // namespace stereodet

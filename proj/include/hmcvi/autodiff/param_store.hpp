// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef HMCVI_AUTODIFF_PARAM_STORE_HPP_
#define HMCVI_AUTODIFF_PARAM_STORE_HPP_

#include "hmcvi/autodiff/tape.hpp"

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace hmcvi::ad {

/// Named parameter matrices plus their Adam moments.
class ParamStore {
 public:
  struct Entry {
    Matrix value;
    Matrix first_moment;
    Matrix second_moment;
    bool frozen = false;
  };

  void add(const std::string& name, Matrix value);
  /// Overwrites the value (shape must match) and resets its moments.
  void set(const std::string& name, const Matrix& value);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Matrix& value(const std::string& name) const;
  const Entry& entry(const std::string& name) const;
  void freeze(const std::string& name, bool frozen = true);
  /// Replaces value and moments wholesale; used when restoring a checkpoint.
  void restore(const std::string& name, const Entry& e);
  void set_step(std::uint64_t step) { step_ = step; }

  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t total_count() const;
  std::uint64_t step() const { return step_; }

  /// Names with the given prefix, e.g. "dec." selects the decoder.
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  bool operator==(const ParamStore& other) const;

 private:
  friend struct AdamAccess;
  std::map<std::string, Entry> entries_;
  std::uint64_t step_ = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Rescale the whole gradient when its global L2 norm exceeds this; 0 disables.
  double clip_norm = 0.0;
};

struct AdamReport {
  bool applied = false;
  double grad_norm = 0.0;
  bool clipped = false;
  /// Names of parameters with non-finite gradient entries (step rejected).
  std::vector<std::string> non_finite;
};

/// One Adam descent step. Parameters absent from `grads` or frozen are left
/// untouched. A non-finite gradient rejects the whole step and leaves the
/// store unchanged.
AdamReport adam_step(ParamStore& params, const Gradients& grads, double lr,
                     const AdamOptions& options = {});

}  // namespace hmcvi::ad

#endif  // HMCVI_AUTODIFF_PARAM_STORE_HPP_

// Copyright (c) 2026 The hmcvi Authors
// SPDX-License-Identifier: Apache-2.0

#include "hmcvi/autodiff/param_store.hpp"

#include <cmath>
#include <stdexcept>

namespace hmcvi::ad {

void ParamStore::add(const std::string& name, Matrix value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter " + name);
  Entry e;
  e.first_moment = Matrix::Zero(value.rows(), value.cols());
  e.second_moment = Matrix::Zero(value.rows(), value.cols());
  e.value = std::move(value);
  entries_.emplace(name, std::move(e));
}

void ParamStore::set(const std::string& name, const Matrix& value) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter " + name);
  Entry& e = it->second;
  if (e.value.rows() != value.rows() || e.value.cols() != value.cols()) {
    throw std::invalid_argument("shape mismatch setting " + name);
  }
  e.value = value;
  e.first_moment.setZero();
  e.second_moment.setZero();
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

const Matrix& ParamStore::value(const std::string& name) const { return entry(name).value; }

void ParamStore::freeze(const std::string& name, bool frozen) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("unknown parameter " + name);
  it->second.frozen = frozen;
}

void ParamStore::restore(const std::string& name, const Entry& e) {
  if (e.first_moment.rows() != e.value.rows() || e.first_moment.cols() != e.value.cols() ||
      e.second_moment.rows() != e.value.rows() || e.second_moment.cols() != e.value.cols()) {
    throw std::invalid_argument("moment shapes differ from value for " + name);
  }
  entries_[name] = e;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, e] : entries_) out.push_back(name);
  return out;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, e] : entries_) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.push_back(name);
  }
  return out;
}

std::size_t ParamStore::total_count() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += static_cast<std::size_t>(e.value.size());
  return n;
}

bool ParamStore::operator==(const ParamStore& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (const auto& [name, e] : entries_) {
    auto it = other.entries_.find(name);
    if (it == other.entries_.end()) return false;
    const Matrix& o = it->second.value;
    if (o.rows() != e.value.rows() || o.cols() != e.value.cols()) return false;
    if (o != e.value) return false;
  }
  return true;
}

struct AdamAccess {
  static std::map<std::string, ParamStore::Entry>& entries(ParamStore& p) { return p.entries_; }
  static std::uint64_t& step(ParamStore& p) { return p.step_; }
};

AdamReport adam_step(ParamStore& params, const Gradients& grads, double lr,
                     const AdamOptions& options) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: learning rate must be positive");
  auto& entries = AdamAccess::entries(params);

  AdamReport report;
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::out_of_range("gradient for unknown parameter " + name);
    if (g.rows() != it->second.value.rows() || g.cols() != it->second.value.cols()) {
      throw std::invalid_argument("gradient shape mismatch for " + name);
    }
    if (!g.allFinite()) {
      report.non_finite.push_back(name);
      continue;
    }
    if (!it->second.frozen) sq += g.squaredNorm();
  }
  report.grad_norm = std::sqrt(sq);
  if (!report.non_finite.empty()) return report;

  double scale = 1.0;
  if (options.clip_norm > 0.0 && report.grad_norm > options.clip_norm) {
    scale = options.clip_norm / report.grad_norm;
    report.clipped = true;
  }

  std::uint64_t& step = AdamAccess::step(params);
  ++step;
  const double t = static_cast<double>(step);
  const double c1 = 1.0 - std::pow(options.beta1, t);
  const double c2 = 1.0 - std::pow(options.beta2, t);
  for (const auto& [name, g_raw] : grads) {
    ParamStore::Entry& e = entries.at(name);
    if (e.frozen) continue;
    const Matrix g = g_raw * scale;
    e.first_moment = options.beta1 * e.first_moment + (1.0 - options.beta1) * g;
    e.second_moment =
        options.beta2 * e.second_moment + (1.0 - options.beta2) * g.cwiseProduct(g);
    const auto m_hat = e.first_moment.array() / c1;
    const auto v_hat = e.second_moment.array() / c2;
    e.value.array() -= lr * m_hat / (v_hat.sqrt() + options.epsilon);
  }
  report.applied = true;
  return report;
}

}  // namespace hmcvi::ad

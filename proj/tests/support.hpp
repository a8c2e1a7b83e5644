#pragma once

// Shared helpers for the test binaries: seeded tensor factories and a
// central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "shadowmamba/tensor.hpp"

namespace smtest {

inline sm::Tensor<double> randn(std::vector<int> shape, uint64_t seed,
                                double stdev = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, stdev);
  sm::Tensor<double> t(std::move(shape));
  for (auto& v : *t.data) v = dist(rng);
  return t;
}

inline sm::Tensor<double> randu(std::vector<int> shape, uint64_t seed,
                                double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  sm::Tensor<double> t(std::move(shape));
  for (auto& v : *t.data) v = dist(rng);
  return t;
}

struct FdResult {
  double max_rel = 0.0;
  std::string worst;  // "param#/entry" of the largest mismatch
};

// Runs one taped backward pass through build_loss, then perturbs sampled
// entries of each parameter and compares against central differences.
// samples_per_param == 0 checks every entry.
inline FdResult fd_check(std::vector<sm::Tensor<double>*> params,
                         const std::function<sm::Tensor<double>()>& build_loss,
                         int samples_per_param = 0, uint64_t seed = 1234,
                         double step = 1e-5) {
  for (auto* p : params) {
    p->set_requires_grad();
    p->zero_grad();
  }
  {
    sm::Tape<double> tape;
    auto loss = build_loss();
    tape.backward(loss);
  }
  FdResult res;
  std::mt19937_64 rng(seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto* p = params[pi];
    int64_t n = p->numel();
    std::vector<int64_t> entries;
    if (samples_per_param <= 0 || n <= samples_per_param) {
      entries.resize(n);
      for (int64_t i = 0; i < n; ++i) entries[i] = i;
    } else {
      std::uniform_int_distribution<int64_t> pick(0, n - 1);
      for (int i = 0; i < samples_per_param; ++i) entries.push_back(pick(rng));
    }
    for (int64_t i : entries) {
      double orig = (*p->data)[i];
      (*p->data)[i] = orig + step;
      double lp = build_loss().scalar();
      (*p->data)[i] = orig - step;
      double lm = build_loss().scalar();
      (*p->data)[i] = orig;
      double fd = (lp - lm) / (2.0 * step);
      double an = (*p->grad)[i];
      double rel = std::abs(an - fd) / (std::abs(fd) + 1e-8);
      if (rel > res.max_rel) {
        res.max_rel = rel;
        res.worst = "param" + std::to_string(pi) + "/" + std::to_string(i);
      }
    }
  }
  return res;
}

// Directional-derivative variant: perturbs each parameter tensor along one
// random unit direction and compares <grad, dir> against a Richardson-
// extrapolated central difference. The aggregated signal is far better
// conditioned than per-entry differences on deep graphs, where tiny-gradient
// entries drown in roundoff and high-curvature entries in truncation.
inline FdResult fd_check_groups(
    std::vector<sm::Tensor<double>*> params,
    const std::function<sm::Tensor<double>()>& build_loss,
    uint64_t seed = 1234, double step = 1e-3) {
  for (auto* p : params) {
    p->set_requires_grad();
    p->zero_grad();
  }
  {
    sm::Tape<double> tape;
    auto loss = build_loss();
    tape.backward(loss);
  }
  FdResult res;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto* p = params[pi];
    const int64_t n = p->numel();
    std::vector<double> dir(n);
    double norm = 0.0;
    for (auto& d : dir) {
      d = gauss(rng);
      norm += d * d;
    }
    norm = std::sqrt(norm);
    for (auto& d : dir) d /= norm;

    double an = 0.0;
    for (int64_t i = 0; i < n; ++i) an += (*p->grad)[i] * dir[i];

    const std::vector<double> orig = *p->data;
    auto diff = [&](double h) {
      for (int64_t i = 0; i < n; ++i) (*p->data)[i] = orig[i] + h * dir[i];
      const double lp = build_loss().scalar();
      for (int64_t i = 0; i < n; ++i) (*p->data)[i] = orig[i] - h * dir[i];
      const double lm = build_loss().scalar();
      return (lp - lm) / (2.0 * h);
    };
    const double d1 = diff(step);
    const double d2 = diff(step / 2.0);
    *p->data = orig;
    const double fd = (4.0 * d2 - d1) / 3.0;

    const double rel = std::abs(an - fd) / (std::abs(fd) + 1e-8);
    if (rel > res.max_rel) {
      res.max_rel = rel;
      res.worst = "param" + std::to_string(pi);
    }
  }
  return res;
}

// Multi-scale variant: every entry of `steps` contributes three consistent
// estimators (central differences at h and h/2 plus their Richardson
// combination) and each group scores the best agreement among them. Groups
// with near-zero directional derivatives need a large h (the quotient is
// roundoff-limited) while stiff groups need a small one (truncation-limited);
// no single step size serves both, but a wrong gradient matches none of the
// estimators at any scale.
inline FdResult fd_check_groups_multi(
    std::vector<sm::Tensor<double>*> params,
    const std::function<sm::Tensor<double>()>& build_loss, uint64_t seed,
    const std::vector<double>& steps) {
  for (auto* p : params) {
    p->set_requires_grad();
    p->zero_grad();
  }
  {
    sm::Tape<double> tape;
    auto loss = build_loss();
    tape.backward(loss);
  }
  FdResult res;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto* p = params[pi];
    const int64_t n = p->numel();
    std::vector<double> dir(n);
    double norm = 0.0;
    for (auto& d : dir) {
      d = gauss(rng);
      norm += d * d;
    }
    norm = std::sqrt(norm);
    for (auto& d : dir) d /= norm;

    double an = 0.0;
    for (int64_t i = 0; i < n; ++i) an += (*p->grad)[i] * dir[i];

    const std::vector<double> orig = *p->data;
    auto diff = [&](double h) {
      for (int64_t i = 0; i < n; ++i) (*p->data)[i] = orig[i] + h * dir[i];
      const double lp = build_loss().scalar();
      for (int64_t i = 0; i < n; ++i) (*p->data)[i] = orig[i] - h * dir[i];
      const double lm = build_loss().scalar();
      return (lp - lm) / (2.0 * h);
    };
    double rel = std::numeric_limits<double>::infinity();
    for (double h : steps) {
      const double d1 = diff(h);
      const double d2 = diff(h / 2.0);
      for (double est : {d1, d2, (4.0 * d2 - d1) / 3.0})
        rel = std::min(rel, std::abs(an - est) / (std::abs(est) + 1e-8));
    }
    *p->data = orig;
    if (rel > res.max_rel) {
      res.max_rel = rel;
      res.worst = "param" + std::to_string(pi);
    }
  }
  return res;
}

}  // namespace smtest

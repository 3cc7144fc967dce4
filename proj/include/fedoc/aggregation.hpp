#pragma once

#include <cmath>
#include <initializer_list>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "fedoc/learner.hpp"

namespace fedoc {

// Sparse coefficient vector over constituent ids. Used as a "mass" payload: run
// the protocol with every trained model replaced by {client: 1} and the
// aggregates expose their exact mixing coefficients.
using Composition = std::map<std::size_t, double>;

// Provenance payload; averaging becomes set union.
using TagSet = std::set<std::size_t>;

template <class P>
struct PayloadOps;

template <>
struct PayloadOps<double> {
  static double scaled(const double& x, double w) { return w * x; }
  static void add_scaled(double& acc, const double& x, double w) { acc += w * x; }
  static void divide(double& acc, double total) { acc /= total; }
  static std::uint64_t checksum(const double& x) { return fnv1a(std::span<const double>(&x, 1)); }
};

template <>
struct PayloadOps<ModelParams> {
  static ModelParams scaled(const ModelParams& x, double w) {
    ModelParams out{x.arch, std::vector<double>(x.w.size())};
    for (std::size_t i = 0; i < x.w.size(); ++i) out.w[i] = w * x.w[i];
    return out;
  }
  static void add_scaled(ModelParams& acc, const ModelParams& x, double w) {
    ensure(acc.w.size() == x.w.size(), "aggregation: model size mismatch");
    for (std::size_t i = 0; i < x.w.size(); ++i) acc.w[i] += w * x.w[i];
  }
  static void divide(ModelParams& acc, double total) {
    for (auto& v : acc.w) v /= total;
  }
  static std::uint64_t checksum(const ModelParams& x) { return fnv1a(x.w); }
};

template <>
struct PayloadOps<Composition> {
  static Composition scaled(const Composition& x, double w) {
    Composition out;
    for (const auto& [id, c] : x) out[id] = w * c;
    return out;
  }
  static void add_scaled(Composition& acc, const Composition& x, double w) {
    for (const auto& [id, c] : x) acc[id] += w * c;
  }
  static void divide(Composition& acc, double total) {
    for (auto& [id, c] : acc) c /= total;
  }
  static std::uint64_t checksum(const Composition&) { return 0; }
};

template <>
struct PayloadOps<TagSet> {
  static TagSet scaled(const TagSet& x, double) { return x; }
  static void add_scaled(TagSet& acc, const TagSet& x, double) { acc.insert(x.begin(), x.end()); }
  static void divide(TagSet&, double) {}
  static std::uint64_t checksum(const TagSet&) { return 0; }
};

template <class P>
struct Term {
  double weight = 0.0;
  const P* value = nullptr;
};

// sum_i w_i x_i / sum_i w_i over the positive-weight terms, accumulated in the
// given order. A single positive term is returned unchanged, so degenerate
// aggregations are exact copies.
template <class P>
P weighted_average(std::span<const Term<P>> terms) {
  using Ops = PayloadOps<P>;
  double total = 0.0;
  std::size_t positive = 0;
  const Term<P>* first = nullptr;
  for (const auto& t : terms) {
    ensure(std::isfinite(t.weight) && t.weight >= 0.0, "aggregation weight must be finite and non-negative");
    if (t.weight > 0.0) {
      ensure(t.value != nullptr, "aggregation term without a value");
      if (!first) first = &t;
      ++positive;
      total += t.weight;
    }
  }
  ensure(positive > 0, "aggregation with no positive weight");
  if (positive == 1) return *first->value;
  P acc = Ops::scaled(*first->value, first->weight);
  for (const Term<P>* t = first + 1; t != terms.data() + terms.size(); ++t)
    if (t->weight > 0.0) Ops::add_scaled(acc, *t->value, t->weight);
  Ops::divide(acc, total);
  return acc;
}

template <class P>
P weighted_average(const std::vector<Term<P>>& terms) {
  return weighted_average(std::span<const Term<P>>(terms));
}

template <class P>
P weighted_average(std::initializer_list<Term<P>> terms) {
  return weighted_average(std::span<const Term<P>>(terms.begin(), terms.size()));
}

// Coefficients of a Composition must form a convex combination.
inline void check_convex(const Composition& c, double tol, const std::string& where) {
  double sum = 0.0;
  for (const auto& [id, v] : c) {
    ensure(v >= -tol, where + ": negative coefficient on constituent " + std::to_string(id));
    sum += v;
  }
  ensure(std::abs(sum - 1.0) <= tol, where + ": coefficients sum to " + std::to_string(sum));
}

}  // namespace fedoc

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "lasium/data.hpp"

namespace lasium::data {

namespace {

// Fisher-Yates over the first `k` positions.
template <class T>
void partial_shuffle(std::vector<T>& xs, std::size_t k, Rng& rng) {
  for (std::size_t i = 0; i < k && i + 1 < xs.size(); ++i) {
    const std::size_t j = i + rng.index(xs.size() - i);
    std::swap(xs[i], xs[j]);
  }
}

}  // namespace

MetaSplit split_classes(std::size_t n_classes, const std::array<double, 3>& fractions, std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  const auto n = static_cast<double>(n_classes);
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
  const auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * n));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n_classes) {
    throw ConfigError("split of " + std::to_string(n_classes) + " classes leaves an empty part");
  }

  std::vector<std::uint32_t> ids(n_classes);
  std::iota(ids.begin(), ids.end(), 0u);
  Rng rng(seed);
  partial_shuffle(ids, ids.size(), rng);
  MetaSplit s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
               ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return s;
}

MetaTask sample_supervised_task(const LabeledDataset& ds, const std::vector<std::uint32_t>& classes,
                                std::size_t n_way, std::size_t k_tr, std::size_t k_val, Rng& rng) {
  if (n_way < 2) throw ConfigError("tasks need at least 2 classes");
  if (k_tr < 1) throw ConfigError("tasks need K_tr >= 1");
  if (classes.size() < n_way) {
    throw ConfigError("split has " + std::to_string(classes.size()) + " classes, task needs " + std::to_string(n_way));
  }
  const std::size_t per_class = k_tr + k_val;
  for (std::uint32_t c : classes) {
    if (c >= ds.n_classes()) throw ConfigError("class " + std::to_string(c) + " not in dataset");
    if (ds.class_indices(c).size() < per_class) {
      throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(ds.class_indices(c).size()) +
                        " samples, task needs " + std::to_string(per_class));
    }
  }

  std::vector<std::uint32_t> pool = classes;
  std::vector<std::uint32_t> sorted = classes;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) throw ConfigError("duplicate class in split");
  partial_shuffle(pool, n_way, rng);

  MetaTask t;
  t.n_way = n_way;
  t.k_tr = k_tr;
  t.k_val = k_val;
  t.policy = "supervised";
  for (std::size_t l = 0; l < n_way; ++l) {
    const std::uint32_t cls = pool[l];
    t.source_classes.push_back(ds.class_ids()[cls]);
    std::vector<std::size_t> idx = ds.class_indices(cls);
    partial_shuffle(idx, per_class, rng);
    t.train_sources.insert(t.train_sources.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k_tr));
    t.val_sources.insert(t.val_sources.end(), idx.begin() + static_cast<std::ptrdiff_t>(k_tr),
                         idx.begin() + static_cast<std::ptrdiff_t>(per_class));
  }
  t.train_x = ds.gather(t.train_sources);
  t.train_y = grouped_labels(n_way, k_tr);
  if (k_val > 0) {
    t.val_x = ds.gather(t.val_sources);
    t.val_y = grouped_labels(n_way, k_val);
  }
  return t;
}

}  // namespace lasium::data

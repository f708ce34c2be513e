#include "mvtn/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mvtn/dataset.hpp"
#include "mvtn/error.hpp"

namespace mvtn {

namespace {

// Dense symmetric helpers on row-major d x d matrices.

bool cholesky_lower(std::vector<double>& a, int d) {
  for (int j = 0; j < d; ++j) {
    double diag = a[j * d + j];
    for (int k = 0; k < j; ++k) diag -= a[j * d + k] * a[j * d + k];
    if (diag <= 0.0 || !std::isfinite(diag)) return false;
    const double root = std::sqrt(diag);
    a[j * d + j] = root;
    for (int i = j + 1; i < d; ++i) {
      double v = a[i * d + j];
      for (int k = 0; k < j; ++k) v -= a[i * d + k] * a[j * d + k];
      a[i * d + j] = v / root;
    }
  }
  // Zero the strict upper triangle so the factor is usable as-is.
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) a[i * d + j] = 0.0;
  return true;
}

void forward_solve(const std::vector<double>& l, int d, std::vector<double>& x) {
  for (int i = 0; i < d; ++i) {
    double v = x[i];
    for (int k = 0; k < i; ++k) v -= l[i * d + k] * x[k];
    x[i] = v / l[i * d + i];
  }
}

void backward_solve_transposed(const std::vector<double>& l, int d, std::vector<double>& x) {
  for (int i = d - 1; i >= 0; --i) {
    double v = x[i];
    for (int k = i + 1; k < d; ++k) v -= l[k * d + i] * x[k];
    x[i] = v / l[i * d + i];
  }
}

// Cyclic Jacobi on a symmetric matrix; returns eigenvalues and accumulates the
// rotations into the column-eigenvector matrix v (row-major).
void jacobi_eigen(std::vector<double>& a, int d, std::vector<double>& eigenvalues,
                  std::vector<double>& v) {
  v.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) v[i * d + i] = 1.0;

  const int max_sweeps = 100;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += a[p * d + q] * a[p * d + q];
    if (std::sqrt(off) < 1e-12) break;

    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        const double apq = a[p * d + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * d + q] - a[p * d + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < d; ++k) {
          const double akp = a[k * d + p], akq = a[k * d + q];
          a[k * d + p] = c * akp - s * akq;
          a[k * d + q] = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          const double apk = a[p * d + k], aqk = a[q * d + k];
          a[p * d + k] = c * apk - s * aqk;
          a[q * d + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < d; ++k) {
          const double vkp = v[k * d + p], vkq = v[k * d + q];
          v[k * d + p] = c * vkp - s * vkq;
          v[k * d + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  eigenvalues.resize(d);
  for (int i = 0; i < d; ++i) eigenvalues[i] = a[i * d + i];
}

double frobenius(const std::vector<double>& a) {
  double s = 0;
  for (double x : a) s += x * x;
  return std::sqrt(s);
}

}  // namespace

std::vector<double> LfdaModel::transform(std::span<const double> feature) const {
  if (static_cast<int>(feature.size()) != input_dim) {
    fail(ErrorCode::DimMismatch, "feature dimension does not match the LFDA model");
  }
  std::vector<double> out(output_dim, 0.0);
  for (int j = 0; j < output_dim; ++j) {
    double acc = 0;
    for (int i = 0; i < input_dim; ++i) acc += feature[i] * projection[i * output_dim + j];
    out[j] = acc;
  }
  return out;
}

double LfdaModel::max_eigen_residual() const {
  const int d = input_dim;
  const double scale = std::max(1.0, frobenius(scatter_between));
  double worst = 0;
  for (int j = 0; j < output_dim; ++j) {
    std::vector<double> v(d), bv(d, 0.0), wv(d, 0.0);
    for (int i = 0; i < d; ++i) v[i] = projection[i * output_dim + j];
    for (int r = 0; r < d; ++r) {
      double b = 0, w = 0;
      for (int c = 0; c < d; ++c) {
        b += scatter_between[r * d + c] * v[c];
        w += scatter_within_reg[r * d + c] * v[c];
      }
      bv[r] = b;
      wv[r] = w;
    }
    double res = 0;
    for (int r = 0; r < d; ++r) {
      const double e = bv[r] - eigenvalues[j] * wv[r];
      res += e * e;
    }
    worst = std::max(worst, std::sqrt(res) / scale);
  }
  return worst;
}

std::vector<ShapeSignature> extract_signatures(const Checkpoint& checkpoint,
                                               const Dataset& dataset) {
  std::vector<ShapeSignature> signatures;
  for (Split split : {Split::Train, Split::Test}) {
    const EvalOutputs outputs = evaluate_with_outputs(checkpoint, dataset, split);
    for (const SampleOutput& sample : outputs.samples) {
      ShapeSignature sig;
      sig.shape_id = sample.shape_id;
      sig.label = sample.class_id;
      sig.split = split;
      sig.feature = sample.prelogit;
      signatures.push_back(std::move(sig));
    }
  }
  std::sort(signatures.begin(), signatures.end(),
            [](const ShapeSignature& a, const ShapeSignature& b) { return a.shape_id < b.shape_id; });
  return signatures;
}

LfdaModel lfda_fit(const std::vector<ShapeSignature>& train_signatures, int output_dim,
                   int neighbors, double epsilon) {
  const int n = static_cast<int>(train_signatures.size());
  if (n < 4) fail(ErrorCode::TooFewSamples, "need at least 4 signatures");
  const int d = static_cast<int>(train_signatures[0].feature.size());
  if (output_dim < 1 || output_dim > d) {
    fail(ErrorCode::InvalidRange, "output dimension must lie in [1, input dim]");
  }

  std::vector<int> labels(n);
  std::vector<int> class_count;
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(train_signatures[i].feature.size()) != d) {
      fail(ErrorCode::DimMismatch, "inconsistent feature dimensions");
    }
    labels[i] = train_signatures[i].label;
    if (labels[i] >= static_cast<int>(class_count.size())) class_count.resize(labels[i] + 1, 0);
    class_count[labels[i]] += 1;
  }
  int populated_classes = 0;
  for (int c : class_count) {
    if (c == 1) fail(ErrorCode::TooFewSamples, "every class needs at least 2 samples");
    if (c > 0) populated_classes += 1;
  }
  if (populated_classes < 2) fail(ErrorCode::TooFewSamples, "need at least 2 classes");

  const auto& x = train_signatures;
  auto dist2 = [&](int i, int j) {
    double s = 0;
    for (int k = 0; k < d; ++k) {
      const double diff = x[i].feature[k] - x[j].feature[k];
      s += diff * diff;
    }
    return s;
  };

  // Local scaling sigma_i: distance to the k-th same-class neighbor.
  std::vector<double> sigma(n, 1.0);
  for (int i = 0; i < n; ++i) {
    std::vector<double> dists;
    for (int j = 0; j < n; ++j) {
      if (j != i && labels[j] == labels[i]) dists.push_back(std::sqrt(dist2(i, j)));
    }
    std::sort(dists.begin(), dists.end());
    const int k = std::min<int>(neighbors, static_cast<int>(dists.size())) - 1;
    sigma[i] = std::max(dists[std::max(k, 0)], 1e-12);
  }

  // Laplacian-form scatter: S = X^T (D - W) X for weight matrix W.
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<double> w_within(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<double> w_between(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      if (labels[i] == labels[j]) {
        const double affinity = std::exp(-dist2(i, j) / (sigma[i] * sigma[j]));
        const double inv_nc = 1.0 / class_count[labels[i]];
        w_within[i * n + j] = affinity * inv_nc;
        w_between[i * n + j] = affinity * (inv_n - inv_nc);
      } else {
        w_between[i * n + j] = inv_n;
      }
    }
  }

  auto scatter_from_weights = [&](const std::vector<double>& w) {
    std::vector<double> degree(n, 0.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) degree[i] += w[i * n + j];
    }
    // S = sum_i deg_i x_i x_i^T - X^T W X, symmetrized for safety.
    std::vector<double> s(static_cast<std::size_t>(d) * d, 0.0);
    std::vector<double> wx(static_cast<std::size_t>(n) * d, 0.0);  // (W X)_i
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const double wij = w[i * n + j];
        if (wij == 0.0) continue;
        for (int k = 0; k < d; ++k) wx[i * d + k] += wij * x[j].feature[k];
      }
    }
    for (int i = 0; i < n; ++i) {
      for (int r = 0; r < d; ++r) {
        const double xr = x[i].feature[r];
        for (int c = 0; c < d; ++c) {
          s[r * d + c] += degree[i] * xr * x[i].feature[c] - xr * wx[i * d + c];
        }
      }
    }
    for (int r = 0; r < d; ++r) {
      for (int c = r + 1; c < d; ++c) {
        const double avg = 0.5 * (s[r * d + c] + s[c * d + r]);
        s[r * d + c] = avg;
        s[c * d + r] = avg;
      }
    }
    return s;
  };

  const std::vector<double> sb = scatter_from_weights(w_between);
  const std::vector<double> sw = scatter_from_weights(w_within);

  // Whiten with escalating regularization until the Cholesky succeeds.
  std::vector<double> chol;
  double eps = epsilon;
  bool ok = false;
  while (eps <= 1e-2 + 1e-15) {
    chol = sw;
    for (int i = 0; i < d; ++i) chol[i * d + i] += eps;
    std::vector<double> attempt = chol;
    if (cholesky_lower(attempt, d)) {
      chol = std::move(attempt);
      ok = true;
      break;
    }
    eps *= 10.0;
  }
  if (!ok) fail(ErrorCode::RankDeficient, "within-class scatter is not positive definite");

  // B = L^-1 Sb L^-T, symmetric; eigenvectors map back through L^-T.
  std::vector<double> b(static_cast<std::size_t>(d) * d, 0.0);
  {
    // Solve L Y = Sb column-wise, then L Z^T = Y^T; B = Z.
    std::vector<double> col(d);
    std::vector<double> y(static_cast<std::size_t>(d) * d, 0.0);
    for (int c = 0; c < d; ++c) {
      for (int r = 0; r < d; ++r) col[r] = sb[r * d + c];
      forward_solve(chol, d, col);
      for (int r = 0; r < d; ++r) y[r * d + c] = col[r];
    }
    for (int r = 0; r < d; ++r) {
      for (int c = 0; c < d; ++c) col[c] = y[r * d + c];
      forward_solve(chol, d, col);
      for (int c = 0; c < d; ++c) b[r * d + c] = col[c];
    }
    for (int r = 0; r < d; ++r) {
      for (int c = r + 1; c < d; ++c) {
        const double avg = 0.5 * (b[r * d + c] + b[c * d + r]);
        b[r * d + c] = avg;
        b[c * d + r] = avg;
      }
    }
  }

  std::vector<double> eigenvalues, vectors;
  jacobi_eigen(b, d, eigenvalues, vectors);

  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int bb) { return eigenvalues[a] > eigenvalues[bb]; });

  LfdaModel model;
  model.input_dim = d;
  model.output_dim = output_dim;
  model.neighbors = neighbors;
  model.epsilon = eps;
  model.scatter_between = sb;
  model.scatter_within_reg = chol;  // replaced below with the full matrix
  // Rebuild Sw + eps I (chol was overwritten by its factor).
  model.scatter_within_reg = sw;
  for (int i = 0; i < d; ++i) model.scatter_within_reg[i * d + i] += eps;

  model.projection.assign(static_cast<std::size_t>(d) * output_dim, 0.0);
  model.eigenvalues.resize(output_dim);
  std::vector<double> v(d);
  for (int j = 0; j < output_dim; ++j) {
    const int src = order[j];
    model.eigenvalues[j] = eigenvalues[src];
    for (int i = 0; i < d; ++i) v[i] = vectors[i * d + src];
    backward_solve_transposed(chol, d, v);
    double norm = 0;
    for (double e : v) norm += e * e;
    norm = std::sqrt(norm);
    if (norm < 1e-300) fail(ErrorCode::RankDeficient, "degenerate eigenvector");
    // Unit norm, sign fixed so the largest-magnitude entry is positive.
    int arg = 0;
    for (int i = 1; i < d; ++i) {
      if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    }
    const double sign = v[arg] >= 0 ? 1.0 : -1.0;
    for (int i = 0; i < d; ++i) model.projection[i * output_dim + j] = sign * v[i] / norm;
  }
  return model;
}

void project_signatures(const LfdaModel& model, std::vector<ShapeSignature>& signatures) {
  for (ShapeSignature& sig : signatures) sig.projected = model.transform(sig.feature);
}

std::vector<int> retrieve(const ShapeSignature& query, const std::vector<ShapeSignature>& gallery) {
  if (gallery.empty()) return {};
  const bool use_projected = !query.projected.empty();
  const std::vector<double>& q = use_projected ? query.projected : query.feature;
  std::vector<std::pair<double, int>> scored;
  scored.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    const std::vector<double>& g = use_projected ? gallery[i].projected : gallery[i].feature;
    if (g.size() != q.size()) {
      fail(ErrorCode::DimMismatch, "query and gallery feature dimensions differ");
    }
    double s = 0;
    for (std::size_t k = 0; k < q.size(); ++k) {
      const double diff = q[k] - g[k];
      s += diff * diff;
    }
    scored.emplace_back(s, static_cast<int>(i));
  }
  std::sort(scored.begin(), scored.end());  // ties break toward the lower index
  std::vector<int> ranked;
  ranked.reserve(scored.size());
  for (const auto& [dist, idx] : scored) ranked.push_back(idx);
  return ranked;
}

double average_precision(std::span<const int> relevance_in_rank_order,
                         int ground_truth_positives, ApMode mode) {
  if (ground_truth_positives < 1) {
    fail(ErrorCode::NoPositives, "a query needs at least one ground-truth positive");
  }
  double sum = 0;
  int hits = 0;
  for (std::size_t rank = 0; rank < relevance_in_rank_order.size(); ++rank) {
    if (!relevance_in_rank_order[rank]) continue;
    hits += 1;
    if (mode == ApMode::Standard) {
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    } else {
      sum += 1.0 / static_cast<double>(rank + 1);
    }
  }
  return sum / static_cast<double>(ground_truth_positives);
}

double mean_ap(const std::vector<std::vector<int>>& relevance_lists,
               const std::vector<int>& ground_truth_positives, ApMode mode) {
  if (relevance_lists.size() != ground_truth_positives.size() || relevance_lists.empty()) {
    fail(ErrorCode::DimMismatch, "relevance lists and GTP counts must pair up");
  }
  double sum = 0;
  for (std::size_t q = 0; q < relevance_lists.size(); ++q) {
    sum += average_precision(relevance_lists[q], ground_truth_positives[q], mode);
  }
  return sum / static_cast<double>(relevance_lists.size());
}

}  // namespace mvtn

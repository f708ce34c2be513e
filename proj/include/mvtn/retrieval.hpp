#pragma once

#include <span>
#include <vector>

#include "mvtn/dataset.hpp"

namespace mvtn {

struct ShapeSignature {
  int shape_id = 0;
  int label = 0;
  Split split = Split::Train;
  std::vector<double> feature;    // pre-classifier activation
  std::vector<double> projected;  // after LFDA, empty until projected
};

// Local Fisher discriminant projection: top-r generalized eigenvectors of
// Sb v = lambda (Sw + eps I) v, solved by Cholesky whitening + cyclic Jacobi.
struct LfdaModel {
  int input_dim = 0;
  int output_dim = 0;
  std::vector<double> projection;   // row-major [input_dim, output_dim]
  std::vector<double> eigenvalues;  // descending
  int neighbors = 7;
  double epsilon = 1e-6;
  // Scatter matrices kept for residual audits, row-major [input_dim, input_dim].
  std::vector<double> scatter_between;
  std::vector<double> scatter_within_reg;

  std::vector<double> transform(std::span<const double> feature) const;
  // max over columns of |Sb v - lambda (Sw + eps I) v| / max(1, |Sb|_F)
  double max_eigen_residual() const;
};

// One signature per shape in the dataset (both splits), deterministic.
std::vector<ShapeSignature> extract_signatures(const Checkpoint& checkpoint,
                                               const Dataset& dataset);

LfdaModel lfda_fit(const std::vector<ShapeSignature>& train_signatures, int output_dim,
                   int neighbors = 7, double epsilon = 1e-6);

void project_signatures(const LfdaModel& model, std::vector<ShapeSignature>& signatures);

// Ranked gallery indices by ascending Euclidean distance, ties by index.
// Uses projected features when both sides carry them.
std::vector<int> retrieve(const ShapeSignature& query,
                          const std::vector<ShapeSignature>& gallery);

enum class ApMode {
  Standard,      // mean of precision-at-hit
  PaperLiteral,  // (1/GTP) * sum over hits of 1/rank
};

double average_precision(std::span<const int> relevance_in_rank_order, int ground_truth_positives,
                         ApMode mode = ApMode::Standard);

double mean_ap(const std::vector<std::vector<int>>& relevance_lists,
               const std::vector<int>& ground_truth_positives, ApMode mode = ApMode::Standard);

}  // namespace mvtn

#include "quadtrack/policy.hpp"

namespace quadtrack {

void RunningMeanStd::update(const Eigen::MatrixXd& batch) {
  if (batch.rows() != mean.size()) throw ShapeError("normalizer width mismatch");
  const double n = static_cast<double>(batch.cols());
  if (n == 0) return;
  const Eigen::VectorXd batch_mean = batch.rowwise().mean();
  const Eigen::VectorXd batch_var = (batch.colwise() - batch_mean).array().square().rowwise().mean();
  if (count == 0) {
    mean = batch_mean;
    var = batch_var;
    count = n;
    return;
  }
  // Chan et al. pairwise merge
  const double total = count + n;
  const Eigen::VectorXd delta = batch_mean - mean;
  const Eigen::VectorXd m2 = var * count + batch_var * n + delta.cwiseAbs2() * (count * n / total);
  mean += delta * (n / total);
  var = m2 / total;
  count = total;
}

void ValueNormalizer::update(const Eigen::VectorXd& targets) {
  if (targets.size() == 0) return;
  running_mean = beta * running_mean + (1 - beta) * targets.mean();
  running_mean_sq = beta * running_mean_sq + (1 - beta) * targets.squaredNorm() / double(targets.size());
  debias = beta * debias + (1 - beta);
}

}  // namespace quadtrack

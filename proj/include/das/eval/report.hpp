#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "das/ddpm/dataset.hpp"
#include "das/eval/experiments.hpp"
#include "das/eval/lds.hpp"
#include "das/eval/pipeline.hpp"

namespace das::eval {

/// Shortest decimal form that reads back to the same double.
std::string format_double(double v);

struct ScoreTable {
  std::string method;
  double lambda = 0.0;
  Eigen::MatrixXd scores;  // n x q
};

/// target_id,train_id,method,lambda,score,rank (rank 1 = most influential).
std::string scores_csv(const ddpm::Dataset& train, const std::vector<Target>& targets,
                       const std::vector<ScoreTable>& tables);

/// method,lambda,mean_lds,std,sem,targets,degenerate
std::string lds_csv(const std::vector<LdsReport>& reports);
/// method,lambda,target_index,lds,degenerate
std::string lds_targets_csv(const std::vector<LdsReport>& reports);
/// method,lambda,tuning_lds,selected
std::string sweep_csv(const std::vector<LambdaSweep>& sweeps);
/// Horizontal bar chart of mean LDS with standard-error whiskers.
std::string lds_svg(const std::vector<LdsReport>& reports, const std::string& title);

/// method,target_index,l2,cosine plus one "mean" row per method.
std::string counterfactual_csv(const std::vector<CounterfactualRow>& rows);
/// pair,l2,loss_diff,output_diff, one row per pair, then a pearson_vs_l2 row.
std::string output_function_csv(const OutputFunctionReport& report);
/// Scatter of both signals against the generation distance.
std::string output_function_svg(const OutputFunctionReport& report);

}  // namespace das::eval

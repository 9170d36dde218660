#pragma once

#include <vector>

#include "heatlab/kato.hpp"
#include "heatlab/stable_kernel.hpp"

namespace heatlab {

/// sup over points of |grad U^a_lambda(b f)|, with the Frobenius norm of the
/// matrix d_i U(b_j f).
double drift_gradient_sup(const StableParams& p, double lambda, const DriftSpec& b, const ScalarField& f,
                          const std::vector<Point>& points, const ResolventOptions& opt);

struct ContractionReport {
    double lambda0 = 0.0;          // smallest tested lambda >= 1 with sup <= 1/2 |f|
    bool found = false;
    std::vector<double> lambdas;   // every evaluated lambda, in evaluation order
    std::vector<double> sups;      // sup |grad U(b f)| / |f| at each
    std::vector<double> check_lambdas;  // 2 lambda0, 4 lambda0
    std::vector<double> check_sups;
};

/// Doubling from lambda = 1 then bisection in log lambda (rel_tol on lambda).
ContractionReport find_lambda0(const StableParams& p, const DriftSpec& b, const ScalarField& f, double f_sup,
                               const std::vector<Point>& points, const ResolventOptions& opt,
                               double lambda_max = 1e8, double rel_tol = 1e-3);

}  // namespace heatlab

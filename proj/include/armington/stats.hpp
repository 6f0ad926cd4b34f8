#pragma once

namespace armington::stats {

/// Upper tail P(X > x) for X ~ chi2(df).
double chi2_sf(double x, double df);

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
/// df <= 0 selects the normal limit.
double t_two_sided(double t, double df);

double normal_two_sided(double z);

}  // namespace armington::stats

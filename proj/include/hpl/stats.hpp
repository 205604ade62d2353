#pragma once

#include <span>
#include <vector>

namespace hpl {

double mean(std::span<const double> x);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
double stddev(std::span<const double> x);
/// sqrt(((na - 1) va + (nb - 1) vb) / (na + nb - 2)).
double pooled_std(std::span<const double> a, std::span<const double> b);
/// Ranks starting at 1; ties share their average rank.
std::vector<double> ranks(std::span<const double> x);
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
/// One-sided sign test: P(#positive >= observed) under Binomial(n, 1/2),
/// where zero differences are dropped.
double sign_test_p(std::span<const double> differences);

}  // namespace hpl

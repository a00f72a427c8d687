#pragma once

// Command-line driver: one binary with subcommands for the synthetic
// benchmark, the spectral PCA pipeline, eigenvector rotation, band
// reconstruction, classical PCA and the estimator-rank experiment.
// Exit codes: 0 success, 2 usage/configuration error, 3 numerical failure.

#include <string>
#include <vector>

namespace rspca::cli {

int run(const std::vector<std::string>& args);
int run(int argc, char** argv);

}  // namespace rspca::cli

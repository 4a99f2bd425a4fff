#pragma once

#include "mambavsr/scan_order.hpp"
#include "mambavsr/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

// Shared scan-order construction: coarse token embedding, a dense+sparse
// affinity graph over the tokens, the Fiedler vector of its normalized
// Laplacian, and the spatial order obtained by sorting that vector.
namespace mvsr::compass {

// Dense row-major square matrix in double precision.
struct DenseMatrix {
    int n = 0;
    std::vector<double> a;

    DenseMatrix() = default;
    explicit DenseMatrix(int size) : n(size), a(static_cast<std::size_t>(size) * size, 0.0) {}
    double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * n + j]; }
    double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * n + j]; }
};

// Symmetric, nonnegative, zero-diagonal affinity over n = grid.h * grid.w
// coarse tokens (raster-indexed).
struct SimilarityGraph {
    DenseMatrix weights;
    Grid grid;

    int n() const noexcept { return weights.n; }
    bool is_valid(double tol = 1e-6) const;
};

struct SimilarityConfig {
    int top_k = 8;
    float blend = 0.5f;        // weight of the dense branch
    float temperature = 0.1f;  // softmax temperature on cosine affinities
};

struct LaplacianMatrix {
    DenseMatrix matrix;
    // Unit-norm null vector D^(1/2) 1 / ||D^(1/2) 1|| (zero if every node is
    // isolated). Deflated out of the eigen-iteration.
    std::vector<double> null_direction;
};

struct FiedlerSolveConfig {
    double tol = 1e-6;
    int max_iter = 10000;
    std::uint64_t seed = 0x5eedf1ed1e2ULL;
};

struct FiedlerResult {
    std::vector<double> vector;
    double eigenvalue = 0.0;
    double residual = 0.0;
    int iterations = 0;
};

struct CompassConfig {
    int factor = 4;
    SimilarityConfig similarity;
    FiedlerSolveConfig solve;
};

// Patch embedding: a factor x factor convolution with stride `factor`.
// feat: [C,H,W], weight: [C',C,factor,factor], bias: [C'] -> [C',H/f,W/f].
Tensor embed_downsample(const Tensor& feat, const Tensor& weight, const Tensor& bias, int factor);

// Embedding weights that average each factor x factor block per channel
// (identity embedding when factor == 1).
Tensor averaging_embedding(int channels, int factor);

// Dense branch: row softmax over cosine affinities of the mean-centred tokens
// divided by the temperature (self included). Sparse branch: the dense row
// restricted to its top_k off-diagonal entries (ties to the lower index) and
// renormalized. W = sym(blend * dense + (1 - blend) * sparse), diag zeroed.
SimilarityGraph build_similarity(const Tensor& tokens, const SimilarityConfig& cfg);

// L = I - D^(-1/2) W D^(-1/2); isolated nodes get an identity row/column.
LaplacianMatrix laplacian(const SimilarityGraph& g);

// Second-smallest eigenpair of a symmetric positive semi-definite matrix by
// inverse iteration on L + u u^T (plus a tiny diagonal shift) with u deflated
// every step. Sign fixed so the first component with magnitude > 1e-9 is
// positive. Throws ConvergenceError after max_iter steps.
FiedlerResult fiedler_vector(const DenseMatrix& l, std::span<const double> null_direction,
                             const FiedlerSolveConfig& cfg);
FiedlerResult fiedler_vector(const LaplacianMatrix& l, const FiedlerSolveConfig& cfg);

// D^(-1/2) v up to a positive scale: the random-walk eigenvector, which is what
// gets sorted. Sorting v itself is not monotone along a path graph because the
// degree-1 endpoints are damped. Isolated nodes map to 0.
std::vector<double> cut_embedding(const LaplacianMatrix& l, std::span<const double> v);

// Ascending sort of v, ties broken by raster index.
ScanOrder order_from_fiedler(std::span<const double> v, Grid grid);

// Each coarse site becomes a factor x factor block; blocks in coarse order,
// pixels within a block in raster order.
ScanOrder expand_order(const ScanOrder& coarse, Grid target);

// Whole pipeline on one feature map [C,H,W]. Extents not divisible by the
// factor are handled by replicate-padding for the graph and restricting the
// expanded order back to H x W. A token field without content (all tokens
// equal) or with a single token yields raster order.
ScanOrder build_compass(const Tensor& feat, const Tensor& embed_weight, const Tensor& embed_bias,
                        const CompassConfig& cfg);

} // namespace mvsr::compass

#pragma once

#include <cstdint>
#include <vector>

#include "ssseg/attention.hpp"
#include "ssseg/backbone.hpp"
#include "ssseg/masks.hpp"
#include "ssseg/ops.hpp"

namespace ssseg {

enum class KernelFeatures {
    intensity_xy,  // full [I, x, y] vector
    intensity,     // I only
    xy,            // x, y only
};

// Weighted sum of Gaussian kernels over the per-pixel feature vector
// [intensity, x, y] with intensity and coordinates normalized to [0,1].
struct KernelSpec {
    struct Kernel {
        double weight = 1.0;
        double sigma = 0.1;
        KernelFeatures features = KernelFeatures::intensity_xy;
    };
    std::vector<Kernel> kernels;

    static KernelSpec default_single() {
        KernelSpec s;
        s.kernels.push_back(Kernel{});
        return s;
    }
    void validate() const;
};

// Chebyshev neighborhood 0 < ||q-p||_inf < radius, in pixels of the grid the
// loss runs on.
struct WindowSpec {
    int radius = 5;
};

struct LossWeights {
    double lambda_mcrf = 0.1;
    double lambda_atn = 0.1;
};

// Side-channel details of a pairwise loss evaluation.
struct PairLossStats {
    int64_t valid_pixels = 0;
    int64_t pair_terms = 0;
    bool empty_set = false;  // averaging set was empty; loss returned as 0
};

// Feature layout convention: [intensity components..., x, y].
double gaussian_kernel_similarity(const std::vector<double>& features_p,
                                  const std::vector<double>& features_q, const KernelSpec& spec);

// Cross entropy averaged over labeled pixels only; exact 0 when no pixel is
// labeled. Computed from logits via log-softmax, identical to -log probs.
Tensor pce_loss(const Prediction& pred, const ScribbleMask& scribbles);

// Pairwise class-disagreement penalty, gated to valid unlabeled pixels and
// windowed. Kernel values are constants; gradient flows through the
// prediction only.
Tensor masked_crf_loss(const Prediction& pred, const Tensor& image, const GateMask& gate,
                       const KernelSpec& spec, const WindowSpec& window,
                       PairLossStats* stats = nullptr);

// Consistency penalty between the down-sampled prediction and the learned
// affinity S, weighted by the distance decay map M. Gradient flows through
// the prediction and through S. The unlabeled set is projected onto the
// coarse grid: a cell is unlabeled only if every full-resolution pixel it
// covers is (requires grid dims to divide the prediction dims).
Tensor attentive_similarity_loss(const Prediction& pred, const AffinityMatrix& S,
                                 const DistanceDecayMap& M, const ScribbleMask& scribbles,
                                 const WindowSpec& window, int grid_h, int grid_w,
                                 PairLossStats* stats = nullptr);

struct LossSpecs {
    KernelSpec kernel = KernelSpec::default_single();
    WindowSpec mcrf_window{5};  // full-resolution pixels
    WindowSpec asl_window{5};   // coarse-grid pixels
    int grid_h = 0, grid_w = 0;
};

// l_seg + lambda_mcrf * l_mcrf + lambda_atn * l_atn. Components with zero
// weight are skipped; the value is unchanged by the skip. S and M may be left
// default-constructed when lambda_atn is 0.
Tensor total_loss(const Prediction& pred, const Tensor& image, const ScribbleMask& scribbles,
                  const GateMask& gate, const AffinityMatrix& S, const DistanceDecayMap& M,
                  const LossWeights& weights, const LossSpecs& specs);

}  // namespace ssseg

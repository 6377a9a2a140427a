#pragma once

#include <string>
#include <vector>

#include "ssseg/attention.hpp"
#include "ssseg/backbone.hpp"
#include "ssseg/kv_config.hpp"
#include "ssseg/losses.hpp"
#include "ssseg/masks.hpp"
#include "ssseg/metrics.hpp"
#include "ssseg/rng.hpp"

namespace ssseg {

// Synthetic stand-in dataset: per case a small stack of slices holding 1-3
// elliptical organs (one class each, brighter than background), with
// per-pixel Gaussian noise. Scribbles come from the simulation pipeline.
struct SyntheticSpec {
    int image_size = 64;
    int cases = 40;
    int slices_per_case = 5;
    int min_organs = 1;
    int max_organs = 3;
    int num_classes = 4;  // background + 3 organ classes
    double noise_sigma = 0.10;
    double background_level = 0.20;
    double class_contrast = 0.18;  // intensity offset per class index
    double spacing_x = 1.0, spacing_y = 1.0, thickness_z = 6.0;
    int hull_expand_px = 5;
    uint64_t seed = 1;

    void validate() const;
    static SyntheticSpec from_config(const KvConfig& cfg);
    KvConfig to_config() const;
};

struct CaseData {
    std::string id;
    VolumeMeta meta;
    int h = 0, w = 0;
    int num_classes = 0;
    std::vector<std::vector<double>> images;  // per slice, row-major, in [0,1]
    std::vector<LabelMap> dense;
    std::vector<ScribbleMask> scribbles;
};

// Deterministic given the spec seed. Returned intensities are the raw
// clipped values; standardization to [0,1] per case happens on load.
std::vector<CaseData> generate_dataset(const SyntheticSpec& spec);
void write_dataset(const std::vector<CaseData>& cases, const std::string& dir);
std::vector<CaseData> load_dataset(const std::string& dir);

struct AugmentConfig {
    double max_rotation_deg = 25.0;
    bool allow_flips = true;  // disable for left/right confusable structures
    int resize_to = 0;        // 0 keeps the native resolution
};

struct AugmentRecord {
    double angle_deg = 0.0;
    bool flip_h = false, flip_v = false;
    // 1 where the inverse-mapped coordinate falls outside the source image
    // (extrapolated margin; included in the regularizer sums downstream).
    std::vector<uint8_t> margin;
};

// Flips (exact index maps) followed by rotation about the image center.
// Image samples bilinearly, labels nearest-neighbor with unknown fill; exact
// lattice mapping for multiples of 90 degrees.
AugmentRecord apply_rigid_augment(const std::vector<double>& image, const ScribbleMask& scrib,
                                  int h, int w, double angle_deg, bool flip_h, bool flip_v,
                                  std::vector<double>& image_out, ScribbleMask& scrib_out);

// Random draws, in order: flip_h, flip_v (if allowed), rotation angle.
AugmentRecord augment(const std::vector<double>& image, const ScribbleMask& scrib, int h, int w,
                      Rng& rng, const AugmentConfig& cfg, std::vector<double>& image_out,
                      ScribbleMask& scrib_out);

enum class Preset { pce_only, pce_mcrf, full };
std::string preset_name(Preset p);
Preset preset_from_name(const std::string& name);

struct TrainConfig {
    std::string data_dir;  // used by the CLI; train() takes the dataset directly
    Preset preset = Preset::full;
    int epochs = 10;
    int batch_size = 1;
    double base_lr = 0.1;
    double momentum = 0.9;
    double poly_power = 0.9;
    double lambda_mcrf = 0.1;
    double lambda_atn = 0.1;
    int mcrf_radius = 5;      // full-resolution pixels
    double mcrf_sigma = 0.1;  // joint intensity/location bandwidth
    int asl_radius = 5;       // coarse-grid pixels
    double asl_sigma = 0.0;   // 0 picks asl_radius / 2
    FcnConfig fcn;
    AttentionConfig attn;  // feature_dim is filled from the host level
    AugmentConfig aug;
    std::string diagnostics_dir;  // for non-finite loss dumps; "" = ./nan_dump
    uint64_t seed = 1;

    // The preset zeroes the unused loss weights.
    double effective_lambda_mcrf() const {
        return preset == Preset::pce_only ? 0.0 : lambda_mcrf;
    }
    double effective_lambda_atn() const { return preset == Preset::full ? lambda_atn : 0.0; }

    static TrainConfig from_config(const KvConfig& cfg);
    KvConfig to_config() const;
};

// Backbone + attention parameters behind one ParamSet (shared tensor
// handles).
struct Model {
    FcnConfig fcn_cfg;
    AttentionConfig attn_cfg;
    FcnParams fcn;
    AttentionParams attn;
    ParamSet params;
};

Model make_model(const FcnConfig& fcn_cfg, AttentionConfig attn_cfg, Rng& rng);
void save_model(const std::string& path, const Model& model, const KvConfig& extra);
Model load_model(const std::string& path);

struct TrainResult {
    Model model;
    std::string log;
    int64_t steps = 0;
    double seconds = 0.0;
};

// SGD with momentum and polynomial decay; deterministic given seed and
// single-threaded execution. Aborts with a diagnostic dump when the loss
// goes non-finite.
TrainResult train(const TrainConfig& cfg, const std::vector<CaseData>& dataset);

// Argmax over class probabilities; ties resolve to the lowest class index.
LabelMap argmax_prediction(const Prediction& pred);

// Stacks per-slice predictions into case volumes and scores them. When
// overlay_dir is set, writes one PPM per slice with prediction contours over
// the input.
MetricsReport evaluate(const Model& model, const std::vector<CaseData>& dataset,
                       const std::string& overlay_dir = "");

double median(std::vector<double> values);

struct AblationRun {
    Preset preset = Preset::full;
    uint64_t seed = 0;
    std::vector<double> dice_values;  // per case per foreground class
    std::vector<double> hd95_values;  // undefined mapped to +inf
    double median_dice = 0.0;
    double median_hd95 = 0.0;
    double train_seconds = 0.0;
    bool failed = false;  // training aborted (e.g. non-finite loss)
    std::string error;
};

struct AblationSummary {
    std::vector<AblationRun> runs;
    std::vector<double> pooled_dice(Preset p) const;
    std::vector<double> pooled_hd95(Preset p) const;
    double pooled_median_dice(Preset p) const;
    double pooled_median_hd95(Preset p) const;
    std::string to_text() const;
};

// Trains and evaluates the three presets across n_seeds seeds (seed values
// 1..n_seeds), optionally in parallel; runs are independent and
// deterministic regardless of the job count. out_dir receives per-run logs,
// checkpoints and reports when non-empty.
AblationSummary run_ablation(const TrainConfig& base, const std::vector<CaseData>& train_set,
                             const std::vector<CaseData>& eval_set, int n_seeds, int jobs,
                             const std::string& out_dir);

}  // namespace ssseg

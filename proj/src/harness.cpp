#include "ssseg/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "ssseg/image_io.hpp"
#include "ssseg/scribblesim.hpp"

namespace fs = std::filesystem;

namespace ssseg {

// ---------------------------------------------------------------------------
// synthetic dataset

void SyntheticSpec::validate() const {
    if (image_size < 16) throw std::invalid_argument("synthetic spec: image_size too small");
    if (cases < 1 || slices_per_case < 1)
        throw std::invalid_argument("synthetic spec: needs at least one case and slice");
    if (min_organs < 1 || max_organs < min_organs)
        throw std::invalid_argument("synthetic spec: bad organ count range");
    if (max_organs > num_classes - 1)
        throw std::invalid_argument("synthetic spec: more organs than foreground classes");
    if (noise_sigma < 0.0) throw std::invalid_argument("synthetic spec: negative noise");
    if (!(spacing_x > 0.0) || !(spacing_y > 0.0) || !(thickness_z > 0.0))
        throw std::invalid_argument("synthetic spec: spacing must be positive");
    const double top = background_level + class_contrast * (num_classes - 1);
    if (top > 1.0 + 1e-9)
        throw std::invalid_argument("synthetic spec: class intensities exceed 1");
}

SyntheticSpec SyntheticSpec::from_config(const KvConfig& cfg) {
    SyntheticSpec s;
    s.image_size = static_cast<int>(cfg.get_int("image_size", s.image_size));
    s.cases = static_cast<int>(cfg.get_int("cases", s.cases));
    s.slices_per_case = static_cast<int>(cfg.get_int("slices_per_case", s.slices_per_case));
    s.min_organs = static_cast<int>(cfg.get_int("min_organs", s.min_organs));
    s.max_organs = static_cast<int>(cfg.get_int("max_organs", s.max_organs));
    s.num_classes = static_cast<int>(cfg.get_int("num_classes", s.num_classes));
    s.noise_sigma = cfg.get_double("noise_sigma", s.noise_sigma);
    s.background_level = cfg.get_double("background_level", s.background_level);
    s.class_contrast = cfg.get_double("class_contrast", s.class_contrast);
    s.spacing_x = cfg.get_double("spacing_x", s.spacing_x);
    s.spacing_y = cfg.get_double("spacing_y", s.spacing_y);
    s.thickness_z = cfg.get_double("thickness_z", s.thickness_z);
    s.hull_expand_px = static_cast<int>(cfg.get_int("hull_expand_px", s.hull_expand_px));
    s.seed = static_cast<uint64_t>(cfg.get_int("seed", static_cast<int64_t>(s.seed)));
    s.validate();
    return s;
}

KvConfig SyntheticSpec::to_config() const {
    KvConfig cfg;
    cfg.set_int("image_size", image_size);
    cfg.set_int("cases", cases);
    cfg.set_int("slices_per_case", slices_per_case);
    cfg.set_int("min_organs", min_organs);
    cfg.set_int("max_organs", max_organs);
    cfg.set_int("num_classes", num_classes);
    cfg.set_double("noise_sigma", noise_sigma);
    cfg.set_double("background_level", background_level);
    cfg.set_double("class_contrast", class_contrast);
    cfg.set_double("spacing_x", spacing_x);
    cfg.set_double("spacing_y", spacing_y);
    cfg.set_double("thickness_z", thickness_z);
    cfg.set_int("hull_expand_px", hull_expand_px);
    cfg.set_int("seed", static_cast<int64_t>(seed));
    return cfg;
}

namespace {

struct Organ {
    double cx, cy;       // pixel center
    double a, b;         // in-plane axes
    double phi;          // rotation
    double zc, zr;       // slice-axis center and radius
    int class_id;
};

bool inside_ellipse(const Organ& o, double scale, double x, double y) {
    const double dx = x - o.cx, dy = y - o.cy;
    const double c = std::cos(o.phi), s = std::sin(o.phi);
    const double u = (dx * c + dy * s) / (o.a * scale);
    const double v = (-dx * s + dy * c) / (o.b * scale);
    return u * u + v * v <= 1.0;
}

}  // namespace

std::vector<CaseData> generate_dataset(const SyntheticSpec& spec) {
    spec.validate();
    const int S = spec.image_size;
    Rng master(spec.seed);
    std::vector<CaseData> cases;
    cases.reserve(static_cast<size_t>(spec.cases));
    for (int ci = 0; ci < spec.cases; ++ci) {
        Rng rng = master.fork(static_cast<uint64_t>(ci));
        CaseData cd;
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "case_%04d", ci);
        cd.id = idbuf;
        cd.meta = VolumeMeta{spec.spacing_x, spec.spacing_y, spec.thickness_z};
        cd.h = S;
        cd.w = S;
        cd.num_classes = spec.num_classes;

        const int n_organs = static_cast<int>(rng.uniform_int(spec.min_organs, spec.max_organs));
        std::vector<Organ> organs;
        for (int k = 0; k < n_organs; ++k) {
            Organ o{};
            o.class_id = k + 1;
            // elongated shapes so the eroded core keeps a curve-like skeleton
            o.a = rng.uniform(0.16, 0.24) * S;
            o.b = rng.uniform(0.085, 0.12) * S;
            o.phi = rng.uniform(0.0, M_PI);
            o.zc = rng.uniform(0.30, 0.70) * (spec.slices_per_case - 1);
            o.zr = rng.uniform(0.55, 0.95) * (0.5 * spec.slices_per_case + 0.5);
            bool placed = false;
            while (!placed) {
                for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
                    const double margin = o.a + 2.0;
                    o.cx = rng.uniform(margin, S - 1 - margin);
                    o.cy = rng.uniform(margin, S - 1 - margin);
                    placed = true;
                    for (const Organ& other : organs) {
                        const double dx = o.cx - other.cx, dy = o.cy - other.cy;
                        const double min_d = 0.75 * (o.a + other.a) + 3.0;
                        if (dx * dx + dy * dy < min_d * min_d) {
                            placed = false;
                            break;
                        }
                    }
                }
                if (!placed) {  // crowded layout: shrink and retry
                    o.a *= 0.9;
                    o.b *= 0.9;
                    if (o.a < 0.08 * S) break;
                }
            }
            if (placed) organs.push_back(o);
        }

        const ScribbleSimConfig sim_cfg{spec.hull_expand_px, spec.seed};
        for (int si = 0; si < spec.slices_per_case; ++si) {
            LabelMap dense(S, S);
            for (const Organ& o : organs) {
                const double t = (si - o.zc) / o.zr;
                const double rho = 1.0 - t * t;
                if (rho <= 0.06) continue;  // organ absent on this slice
                const double scale = std::sqrt(rho);
                // first-come keeps class regions disjoint if shapes brush
                for (int y = 0; y < S; ++y)
                    for (int x = 0; x < S; ++x)
                        if (dense.at(y, x) == 0 && inside_ellipse(o, scale, x, y))
                            dense.at(y, x) = o.class_id;
            }
            std::vector<double> img(static_cast<size_t>(S) * S);
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const int32_t c = dense.at(y, x);
                    double v = spec.background_level + spec.class_contrast * c +
                               rng.normal(0.0, spec.noise_sigma);
                    img[static_cast<size_t>(y) * S + x] = std::clamp(v, 0.0, 1.0);
                }
            cd.images.push_back(std::move(img));
            cd.scribbles.push_back(simulate_scribbles(dense, spec.num_classes, sim_cfg));
            cd.dense.push_back(std::move(dense));
        }
        cases.push_back(std::move(cd));
    }
    return cases;
}

void write_dataset(const std::vector<CaseData>& cases, const std::string& dir) {
    fs::create_directories(dir);
    {
        std::ofstream f(dir + "/dataset.txt");
        if (!f) throw std::runtime_error("cannot write dataset index in " + dir);
        f << "cases=" << cases.size() << "\n";
    }
    for (const CaseData& cd : cases) {
        const std::string cdir = dir + "/" + cd.id;
        fs::create_directories(cdir);
        {
            KvConfig meta;
            meta.set("id", cd.id);
            meta.set_double("spacing_x", cd.meta.spacing_x);
            meta.set_double("spacing_y", cd.meta.spacing_y);
            meta.set_double("thickness_z", cd.meta.thickness_z);
            meta.set_int("slices", static_cast<int64_t>(cd.images.size()));
            meta.set_int("h", cd.h);
            meta.set_int("w", cd.w);
            meta.set_int("num_classes", cd.num_classes);
            std::ofstream f(cdir + "/meta.txt");
            f << meta.to_text();
        }
        for (size_t si = 0; si < cd.images.size(); ++si) {
            char name[48];
            std::snprintf(name, sizeof name, "/slice_%03zu", si);
            GrayImage16 img;
            img.h = cd.h;
            img.w = cd.w;
            img.v.resize(cd.images[si].size());
            for (size_t i = 0; i < img.v.size(); ++i) {
                const double v = std::clamp(cd.images[si][i], 0.0, 1.0);
                img.v[i] = static_cast<uint16_t>(std::llround(v * 65535.0));
            }
            write_pgm16(cdir + name + ".img.pgm", img);

            GrayImage8 mask;
            mask.h = cd.h;
            mask.w = cd.w;
            mask.v.resize(cd.dense[si].v.size());
            for (size_t i = 0; i < mask.v.size(); ++i)
                mask.v[i] = static_cast<uint8_t>(cd.dense[si].v[i]);
            write_pgm8(cdir + name + ".mask.pgm", mask);

            GrayImage8 scrib;
            scrib.h = cd.h;
            scrib.w = cd.w;
            scrib.v.resize(cd.scribbles[si].labels.size());
            for (size_t i = 0; i < scrib.v.size(); ++i)
                scrib.v[i] = static_cast<uint8_t>(cd.scribbles[si].labels[i]);
            write_pgm8(cdir + name + ".scrib.pgm", scrib);
        }
    }
}

std::vector<CaseData> load_dataset(const std::string& dir) {
    const KvConfig index = KvConfig::parse_file(dir + "/dataset.txt");
    const int64_t n_cases = index.get_int("cases", -1);
    if (n_cases < 0) throw std::runtime_error("dataset index missing case count: " + dir);
    std::vector<CaseData> cases;
    for (int64_t ci = 0; ci < n_cases; ++ci) {
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "case_%04lld", static_cast<long long>(ci));
        const std::string cdir = dir + "/" + idbuf;
        const KvConfig meta = KvConfig::parse_file(cdir + "/meta.txt");
        CaseData cd;
        cd.id = meta.get("id", idbuf);
        cd.meta.spacing_x = meta.get_double("spacing_x", 1.0);
        cd.meta.spacing_y = meta.get_double("spacing_y", 1.0);
        cd.meta.thickness_z = meta.get_double("thickness_z", 1.0);
        cd.h = static_cast<int>(meta.get_int("h", 0));
        cd.w = static_cast<int>(meta.get_int("w", 0));
        cd.num_classes = static_cast<int>(meta.get_int("num_classes", 0));
        const int64_t slices = meta.get_int("slices", 0);
        for (int64_t si = 0; si < slices; ++si) {
            char name[48];
            std::snprintf(name, sizeof name, "/slice_%03lld", static_cast<long long>(si));
            const GrayImage16 img = read_pgm16(cdir + name + ".img.pgm");
            std::vector<double> vals(img.v.size());
            for (size_t i = 0; i < vals.size(); ++i) vals[i] = img.v[i] / 65535.0;
            cd.images.push_back(std::move(vals));

            const GrayImage8 mask = read_pgm8(cdir + name + ".mask.pgm");
            LabelMap dense(cd.h, cd.w);
            for (size_t i = 0; i < mask.v.size(); ++i) dense.v[i] = mask.v[i];
            cd.dense.push_back(std::move(dense));

            const GrayImage8 scrib = read_pgm8(cdir + name + ".scrib.pgm");
            ScribbleMask sm(cd.h, cd.w, cd.num_classes);
            for (size_t i = 0; i < scrib.v.size(); ++i) sm.labels[i] = scrib.v[i];
            cd.scribbles.push_back(std::move(sm));
        }
        // standardize intensity to [0,1] per case volume
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (const auto& img : cd.images)
            for (double v : img) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        const double range = hi - lo;
        for (auto& img : cd.images)
            for (double& v : img) v = range > 0.0 ? (v - lo) / range : 0.0;
        cases.push_back(std::move(cd));
    }
    return cases;
}

// ---------------------------------------------------------------------------
// augmentation

AugmentRecord apply_rigid_augment(const std::vector<double>& image, const ScribbleMask& scrib,
                                  int h, int w, double angle_deg, bool flip_h, bool flip_v,
                                  std::vector<double>& image_out, ScribbleMask& scrib_out) {
    if (static_cast<int64_t>(image.size()) != static_cast<int64_t>(h) * w ||
        scrib.h != h || scrib.w != w)
        throw std::invalid_argument("apply_rigid_augment: input dims disagree");

    // flips are exact index maps
    std::vector<double> fimg(image.size());
    std::vector<int32_t> fscrib(scrib.labels.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int sy = flip_v ? h - 1 - y : y;
            const int sx = flip_h ? w - 1 - x : x;
            fimg[static_cast<size_t>(y) * w + x] = image[static_cast<size_t>(sy) * w + sx];
            fscrib[static_cast<size_t>(y) * w + x] =
                scrib.labels[static_cast<size_t>(sy) * w + sx];
        }

    AugmentRecord rec;
    rec.angle_deg = angle_deg;
    rec.flip_h = flip_h;
    rec.flip_v = flip_v;
    rec.margin.assign(static_cast<size_t>(h) * w, 0);

    image_out.assign(static_cast<size_t>(h) * w, 0.0);
    scrib_out = ScribbleMask(h, w, scrib.num_classes);

    double c, s;
    if (std::fmod(angle_deg, 90.0) == 0.0) {
        // exact lattice trig for quarter turns
        const int k = ((static_cast<int>(std::llround(angle_deg / 90.0)) % 4) + 4) % 4;
        static constexpr double kCos[4] = {1.0, 0.0, -1.0, 0.0};
        static constexpr double kSin[4] = {0.0, 1.0, 0.0, -1.0};
        c = kCos[k];
        s = kSin[k];
    } else {
        const double rad = angle_deg * M_PI / 180.0;
        c = std::cos(rad);
        s = std::sin(rad);
    }
    const double cx = 0.5 * (w - 1), cy = 0.5 * (h - 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double sx = cx + c * dx + s * dy;
            const double sy = cy - s * dx + c * dy;
            const size_t i = static_cast<size_t>(y) * w + x;
            if (sx < 0.0 || sx > w - 1 || sy < 0.0 || sy > h - 1) {
                rec.margin[i] = 1;  // no preimage: extrapolated margin
                image_out[i] = 0.0;
                scrib_out.labels[i] = kUnknownLabel;
                continue;
            }
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const int x1 = std::min(x0 + 1, w - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const double fx = sx - x0, fy = sy - y0;
            image_out[i] =
                (1.0 - fy) * ((1.0 - fx) * fimg[static_cast<size_t>(y0) * w + x0] +
                              fx * fimg[static_cast<size_t>(y0) * w + x1]) +
                fy * ((1.0 - fx) * fimg[static_cast<size_t>(y1) * w + x0] +
                      fx * fimg[static_cast<size_t>(y1) * w + x1]);
            const int nx = static_cast<int>(std::llround(sx));
            const int ny = static_cast<int>(std::llround(sy));
            scrib_out.labels[i] = fscrib[static_cast<size_t>(ny) * w + nx];
        }
    return rec;
}

namespace {

void resize_sample(const std::vector<double>& image, const ScribbleMask& scrib, int h, int w,
                   int target, std::vector<double>& image_out, ScribbleMask& scrib_out) {
    image_out.assign(static_cast<size_t>(target) * target, 0.0);
    scrib_out = ScribbleMask(target, target, scrib.num_classes);
    const double sy = target > 1 ? static_cast<double>(h - 1) / (target - 1) : 0.0;
    const double sx = target > 1 ? static_cast<double>(w - 1) / (target - 1) : 0.0;
    for (int y = 0; y < target; ++y)
        for (int x = 0; x < target; ++x) {
            const double fsy = sy * y, fsx = sx * x;
            const int y0 = std::min(static_cast<int>(std::floor(fsy)), h - 1);
            const int x0 = std::min(static_cast<int>(std::floor(fsx)), w - 1);
            const int y1 = std::min(y0 + 1, h - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const double fy = fsy - y0, fx = fsx - x0;
            image_out[static_cast<size_t>(y) * target + x] =
                (1.0 - fy) * ((1.0 - fx) * image[static_cast<size_t>(y0) * w + x0] +
                              fx * image[static_cast<size_t>(y0) * w + x1]) +
                fy * ((1.0 - fx) * image[static_cast<size_t>(y1) * w + x0] +
                      fx * image[static_cast<size_t>(y1) * w + x1]);
            scrib_out.labels[static_cast<size_t>(y) * target + x] =
                scrib.labels[static_cast<size_t>(std::llround(fsy)) * w +
                             static_cast<size_t>(std::llround(fsx))];
        }
}

}  // namespace

AugmentRecord augment(const std::vector<double>& image, const ScribbleMask& scrib, int h, int w,
                      Rng& rng, const AugmentConfig& cfg, std::vector<double>& image_out,
                      ScribbleMask& scrib_out) {
    const std::vector<double>* img = &image;
    const ScribbleMask* sm = &scrib;
    std::vector<double> resized_img;
    ScribbleMask resized_scrib;
    int hh = h, ww = w;
    if (cfg.resize_to > 0 && (cfg.resize_to != h || cfg.resize_to != w)) {
        resize_sample(image, scrib, h, w, cfg.resize_to, resized_img, resized_scrib);
        img = &resized_img;
        sm = &resized_scrib;
        hh = ww = cfg.resize_to;
    }
    bool flip_h = false, flip_v = false;
    if (cfg.allow_flips) {
        flip_h = rng.coin();
        flip_v = rng.coin();
    }
    const double angle =
        cfg.max_rotation_deg > 0.0 ? rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg)
                                   : 0.0;
    return apply_rigid_augment(*img, *sm, hh, ww, angle, flip_h, flip_v, image_out, scrib_out);
}

// ---------------------------------------------------------------------------
// configuration plumbing

std::string preset_name(Preset p) {
    switch (p) {
        case Preset::pce_only: return "pce_only";
        case Preset::pce_mcrf: return "pce_mcrf";
        case Preset::full: return "full";
    }
    return "full";
}

Preset preset_from_name(const std::string& name) {
    if (name == "pce_only") return Preset::pce_only;
    if (name == "pce_mcrf") return Preset::pce_mcrf;
    if (name == "full") return Preset::full;
    throw std::invalid_argument("unknown preset: " + name);
}

TrainConfig TrainConfig::from_config(const KvConfig& cfg) {
    TrainConfig tc;
    tc.data_dir = cfg.get("data", "");
    tc.preset = preset_from_name(cfg.get("preset", preset_name(tc.preset)));
    tc.epochs = static_cast<int>(cfg.get_int("epochs", tc.epochs));
    tc.batch_size = static_cast<int>(cfg.get_int("batch_size", tc.batch_size));
    tc.base_lr = cfg.get_double("base_lr", tc.base_lr);
    tc.momentum = cfg.get_double("momentum", tc.momentum);
    tc.poly_power = cfg.get_double("poly_power", tc.poly_power);
    tc.lambda_mcrf = cfg.get_double("lambda_mcrf", tc.lambda_mcrf);
    tc.lambda_atn = cfg.get_double("lambda_atn", tc.lambda_atn);
    tc.mcrf_radius = static_cast<int>(cfg.get_int("mcrf_radius", tc.mcrf_radius));
    tc.mcrf_sigma = cfg.get_double("mcrf_sigma", tc.mcrf_sigma);
    tc.asl_radius = static_cast<int>(cfg.get_int("asl_radius", tc.asl_radius));
    tc.asl_sigma = cfg.get_double("asl_sigma", tc.asl_sigma);
    tc.fcn.in_channels = static_cast<int>(cfg.get_int("in_channels", tc.fcn.in_channels));
    tc.fcn.num_classes = static_cast<int>(cfg.get_int("num_classes", tc.fcn.num_classes));
    tc.fcn.encoder_channels = cfg.get_int_list("encoder_channels", tc.fcn.encoder_channels);
    tc.fcn.attention_level =
        static_cast<int>(cfg.get_int("attention_level", tc.fcn.attention_level));
    tc.attn.n_heads = static_cast<int>(cfg.get_int("attn_heads", tc.attn.n_heads));
    tc.attn.n_layers = static_cast<int>(cfg.get_int("attn_layers", tc.attn.n_layers));
    tc.attn.d_q = static_cast<int>(cfg.get_int("attn_dq", tc.attn.d_q));
    tc.attn.d_v = static_cast<int>(cfg.get_int("attn_dv", tc.attn.d_v));
    tc.aug.max_rotation_deg = cfg.get_double("aug_max_rotation_deg", tc.aug.max_rotation_deg);
    tc.aug.allow_flips = cfg.get_bool("aug_allow_flips", tc.aug.allow_flips);
    tc.aug.resize_to = static_cast<int>(cfg.get_int("resize_to", tc.aug.resize_to));
    tc.diagnostics_dir = cfg.get("diagnostics_dir", tc.diagnostics_dir);
    tc.seed = static_cast<uint64_t>(cfg.get_int("seed", static_cast<int64_t>(tc.seed)));
    return tc;
}

KvConfig TrainConfig::to_config() const {
    KvConfig cfg;
    cfg.set("data", data_dir);
    cfg.set("preset", preset_name(preset));
    cfg.set_int("epochs", epochs);
    cfg.set_int("batch_size", batch_size);
    cfg.set_double("base_lr", base_lr);
    cfg.set_double("momentum", momentum);
    cfg.set_double("poly_power", poly_power);
    cfg.set_double("lambda_mcrf", lambda_mcrf);
    cfg.set_double("lambda_atn", lambda_atn);
    cfg.set_int("mcrf_radius", mcrf_radius);
    cfg.set_double("mcrf_sigma", mcrf_sigma);
    cfg.set_int("asl_radius", asl_radius);
    cfg.set_double("asl_sigma", asl_sigma);
    cfg.set_int("in_channels", fcn.in_channels);
    cfg.set_int("num_classes", fcn.num_classes);
    {
        std::ostringstream os;
        for (size_t i = 0; i < fcn.encoder_channels.size(); ++i)
            os << (i ? "," : "") << fcn.encoder_channels[i];
        cfg.set("encoder_channels", os.str());
    }
    cfg.set_int("attention_level", fcn.attention_level);
    cfg.set_int("attn_heads", attn.n_heads);
    cfg.set_int("attn_layers", attn.n_layers);
    cfg.set_int("attn_dq", attn.d_q);
    cfg.set_int("attn_dv", attn.d_v);
    cfg.set_double("aug_max_rotation_deg", aug.max_rotation_deg);
    cfg.set("aug_allow_flips", aug.allow_flips ? "1" : "0");
    cfg.set_int("resize_to", aug.resize_to);
    cfg.set("diagnostics_dir", diagnostics_dir);
    cfg.set_int("seed", static_cast<int64_t>(seed));
    return cfg;
}

// ---------------------------------------------------------------------------
// model lifecycle

Model make_model(const FcnConfig& fcn_cfg, AttentionConfig attn_cfg, Rng& rng) {
    fcn_cfg.validate();
    attn_cfg.feature_dim =
        fcn_cfg.encoder_channels[static_cast<size_t>(fcn_cfg.attention_level)];
    attn_cfg.validate();
    Model m;
    m.fcn_cfg = fcn_cfg;
    m.attn_cfg = attn_cfg;
    m.fcn = make_fcn_params(fcn_cfg, rng);
    m.attn = make_attention_params(attn_cfg, rng);
    register_fcn_params(m.fcn, m.params);
    register_attention_params(m.attn, m.params, "attn");
    return m;
}

void save_model(const std::string& path, const Model& model, const KvConfig& extra) {
    KvConfig cfg;
    cfg.set_int("in_channels", model.fcn_cfg.in_channels);
    cfg.set_int("num_classes", model.fcn_cfg.num_classes);
    {
        std::ostringstream os;
        for (size_t i = 0; i < model.fcn_cfg.encoder_channels.size(); ++i)
            os << (i ? "," : "") << model.fcn_cfg.encoder_channels[i];
        cfg.set("encoder_channels", os.str());
    }
    cfg.set_int("attention_level", model.fcn_cfg.attention_level);
    cfg.set_int("attn_heads", model.attn_cfg.n_heads);
    cfg.set_int("attn_layers", model.attn_cfg.n_layers);
    cfg.set_int("attn_dq", model.attn_cfg.d_q);
    cfg.set_int("attn_dv", model.attn_cfg.d_v);
    for (const auto& [k, v] : extra.entries()) cfg.set("x." + k, v);
    save_checkpoint(path, cfg.entries(), model.params);
}

Model load_model(const std::string& path) {
    const CheckpointData data = load_checkpoint(path);
    KvConfig cfg;
    for (const auto& [k, v] : data.config) cfg.set(k, v);
    FcnConfig fcn_cfg;
    fcn_cfg.in_channels = static_cast<int>(cfg.get_int("in_channels", 1));
    fcn_cfg.num_classes = static_cast<int>(cfg.get_int("num_classes", 2));
    fcn_cfg.encoder_channels = cfg.get_int_list("encoder_channels", {16, 32, 64});
    fcn_cfg.attention_level = static_cast<int>(cfg.get_int("attention_level", 2));
    AttentionConfig attn_cfg;
    attn_cfg.n_heads = static_cast<int>(cfg.get_int("attn_heads", 2));
    attn_cfg.n_layers = static_cast<int>(cfg.get_int("attn_layers", 1));
    attn_cfg.d_q = static_cast<int>(cfg.get_int("attn_dq", 0));
    attn_cfg.d_v = static_cast<int>(cfg.get_int("attn_dv", 0));
    Rng rng(0);
    Model m = make_model(fcn_cfg, attn_cfg, rng);
    apply_checkpoint(data, m.params);
    return m;
}

// ---------------------------------------------------------------------------
// training

namespace {

Tensor image_tensor(const std::vector<double>& image, int h, int w) {
    return Tensor::from_data({1, h, w}, image);
}

void dump_diagnostics(const std::string& dir, int64_t step, const Tensor& image,
                      const ScribbleMask& scrib, const std::string& msg) {
    const std::string out = dir.empty() ? std::string("nan_dump") : dir;
    fs::create_directories(out);
    char name[64];
    std::snprintf(name, sizeof name, "/step_%lld", static_cast<long long>(step));
    image.save_file(out + name + "_image.sstn");
    GrayImage8 s;
    s.h = scrib.h;
    s.w = scrib.w;
    s.v.resize(scrib.labels.size());
    for (size_t i = 0; i < s.v.size(); ++i) s.v[i] = static_cast<uint8_t>(scrib.labels[i]);
    write_pgm8(out + name + "_scribbles.pgm", s);
    std::ofstream f(out + name + "_info.txt");
    f << msg << "\n";
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<CaseData>& dataset) {
    const auto t_start = std::chrono::steady_clock::now();
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    if (cfg.epochs < 1 || cfg.batch_size < 1)
        throw std::invalid_argument("train: epochs and batch_size must be >= 1");

    const int native_h = dataset[0].h, native_w = dataset[0].w;
    const int H = cfg.aug.resize_to > 0 ? cfg.aug.resize_to : native_h;
    const int W = cfg.aug.resize_to > 0 ? cfg.aug.resize_to : native_w;

    FcnConfig fcn_cfg = cfg.fcn;
    fcn_cfg.validate();
    if (dataset[0].num_classes != fcn_cfg.num_classes)
        throw std::invalid_argument("train: dataset num_classes differs from config");

    Rng master(cfg.seed);
    Rng init_rng = master.fork(0);
    Rng loop_rng = master.fork(1);
    Model model = make_model(fcn_cfg, cfg.attn, init_rng);
    SsaHook hook(model.attn_cfg, model.attn);

    std::vector<std::pair<int, int>> samples;
    for (size_t ci = 0; ci < dataset.size(); ++ci)
        for (size_t si = 0; si < dataset[ci].images.size(); ++si)
            samples.emplace_back(static_cast<int>(ci), static_cast<int>(si));
    const int64_t n = static_cast<int64_t>(samples.size());
    const int64_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = static_cast<int64_t>(cfg.epochs) * batches_per_epoch;

    const double lambda_mcrf = cfg.effective_lambda_mcrf();
    const double lambda_atn = cfg.effective_lambda_atn();
    const int grid_h = H / (1 << fcn_cfg.attention_level);
    const int grid_w = W / (1 << fcn_cfg.attention_level);
    const double asl_sigma = cfg.asl_sigma > 0.0 ? cfg.asl_sigma : cfg.asl_radius / 2.0;

    LossSpecs specs;
    specs.kernel = KernelSpec::default_single();
    specs.kernel.kernels[0].sigma = cfg.mcrf_sigma;
    specs.mcrf_window.radius = cfg.mcrf_radius;
    specs.asl_window.radius = cfg.asl_radius;
    specs.grid_h = grid_h;
    specs.grid_w = grid_w;

    DistanceDecayMap M;
    if (lambda_atn > 0.0) M = distance_decay_map(grid_h, grid_w, asl_sigma);

    SgdMomentum opt(cfg.momentum);
    std::ostringstream log;
    {
        std::istringstream cfg_text(cfg.to_config().to_text());
        std::string line;
        while (std::getline(cfg_text, line)) log << "# " << line << "\n";
    }

    std::vector<int> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

    char buf[256];
    int64_t step = 0;
    std::vector<double> aug_image;
    ScribbleMask aug_scrib;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(loop_rng.uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }
        for (int64_t b = 0; b < batches_per_epoch; ++b) {
            const int64_t lo = b * cfg.batch_size;
            const int64_t hi = std::min<int64_t>(n, lo + cfg.batch_size);
            const int64_t bn = hi - lo;
            Tensor batch_total;
            double pce_sum = 0.0, mcrf_sum = 0.0, atn_sum = 0.0;
            Tensor last_image;
            for (int64_t k = lo; k < hi; ++k) {
                const auto [ci, si] = samples[static_cast<size_t>(order[static_cast<size_t>(k)])];
                const CaseData& cd = dataset[static_cast<size_t>(ci)];
                augment(cd.images[static_cast<size_t>(si)], cd.scribbles[static_cast<size_t>(si)],
                        cd.h, cd.w, loop_rng, cfg.aug, aug_image, aug_scrib);
                Tensor img = image_tensor(aug_image, H, W);
                last_image = img;
                FcnOutput out = fcn_forward(img, fcn_cfg, model.fcn, &hook);
                Tensor pce = pce_loss(out.pred, aug_scrib);
                pce_sum += pce.value();
                Tensor total_i = pce;
                if (lambda_mcrf > 0.0) {
                    const GateMask gate = gate_from_scribbles(aug_scrib);
                    Tensor mcrf = masked_crf_loss(out.pred, img, gate, specs.kernel,
                                                  specs.mcrf_window);
                    mcrf_sum += mcrf.value();
                    total_i = add(total_i, mul(mcrf, lambda_mcrf));
                }
                if (lambda_atn > 0.0) {
                    const AffinityMatrix S = attention_to_affinity(out.raw, model.attn);
                    Tensor asl = attentive_similarity_loss(out.pred, S, M, aug_scrib,
                                                           specs.asl_window, grid_h, grid_w);
                    atn_sum += asl.value();
                    total_i = add(total_i, mul(asl, lambda_atn));
                }
                batch_total = batch_total.defined() ? add(batch_total, total_i) : total_i;
            }
            const double inv_bn = 1.0 / static_cast<double>(bn);
            if (bn > 1) batch_total = mul(batch_total, inv_bn);
            const double pce_v = pce_sum * inv_bn;
            const double mcrf_v = mcrf_sum * inv_bn;
            const double atn_v = atn_sum * inv_bn;
            const double total_v = batch_total.value();
            if (!std::isfinite(total_v)) {
                std::snprintf(buf, sizeof buf,
                              "non-finite loss at step %lld: pce=%g mcrf=%g atn=%g",
                              static_cast<long long>(step), pce_v, mcrf_v, atn_v);
                dump_diagnostics(cfg.diagnostics_dir, step, last_image, aug_scrib, buf);
                throw std::runtime_error(std::string("train: ") + buf);
            }
            const double lr = poly_lr(cfg.base_lr, step, total_steps, cfg.poly_power);
            std::snprintf(buf, sizeof buf,
                          "step=%lld lr=%.17g pce=%.17g mcrf=%.17g atn=%.17g total=%.17g\n",
                          static_cast<long long>(step), lr, pce_v, mcrf_v, atn_v, total_v);
            log << buf;
            if (batch_total.requires_grad()) {
                backward(batch_total);
                opt.step(model.params, lr);
                model.params.zero_grad();
            }
            ++step;
        }
    }
    TrainResult result{std::move(model), log.str(), step, 0.0};
    result.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return result;
}

// ---------------------------------------------------------------------------
// evaluation

LabelMap argmax_prediction(const Prediction& pred) {
    const int64_t C = pred.probs.shape()[0];
    const int64_t H = pred.probs.shape()[1];
    const int64_t W = pred.probs.shape()[2];
    const int64_t hw = H * W;
    LabelMap out(static_cast<int>(H), static_cast<int>(W));
    const double* p = pred.probs.data().data();
    for (int64_t i = 0; i < hw; ++i) {
        int32_t best = 0;
        double bv = p[i];
        for (int64_t c = 1; c < C; ++c)
            if (p[c * hw + i] > bv) {  // strict: ties keep the lowest class
                bv = p[c * hw + i];
                best = static_cast<int32_t>(c);
            }
        out.v[static_cast<size_t>(i)] = best;
    }
    return out;
}

namespace {

constexpr std::array<std::array<uint8_t, 3>, 6> kClassColors{{
    {220, 50, 47},    // class 1
    {133, 153, 0},    // class 2
    {38, 139, 210},   // class 3
    {181, 137, 0},    // class 4
    {211, 54, 130},   // class 5
    {42, 161, 152},   // class 6
}};

void write_overlay(const std::string& path, const std::vector<double>& image,
                   const LabelMap& pred, int h, int w) {
    RgbImage8 img;
    img.h = h;
    img.w = w;
    img.v.resize(static_cast<size_t>(h) * w);
    for (size_t i = 0; i < img.v.size(); ++i) {
        const uint8_t g = static_cast<uint8_t>(std::clamp(image[i], 0.0, 1.0) * 255.0);
        img.v[i] = {g, g, g};
    }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int32_t c = pred.at(y, x);
            if (c == 0) continue;
            const bool contour = (x + 1 < w && pred.at(y, x + 1) != c) ||
                                 (y + 1 < h && pred.at(y + 1, x) != c) ||
                                 (x > 0 && pred.at(y, x - 1) != c) ||
                                 (y > 0 && pred.at(y - 1, x) != c);
            if (contour)
                img.v[static_cast<size_t>(y) * w + x] =
                    kClassColors[static_cast<size_t>((c - 1) % 6)];
        }
    write_ppm(path, img);
}

}  // namespace

MetricsReport evaluate(const Model& model, const std::vector<CaseData>& dataset,
                       const std::string& overlay_dir) {
    NoGradGuard no_grad;
    SsaHook hook(model.attn_cfg, model.attn);
    if (!overlay_dir.empty()) fs::create_directories(overlay_dir);
    MetricsReport report;
    for (const CaseData& cd : dataset) {
        const int D = static_cast<int>(cd.images.size());
        LabelVolume pred_vol(D, cd.h, cd.w);
        LabelVolume gt_vol(D, cd.h, cd.w);
        for (int si = 0; si < D; ++si) {
            Tensor img = image_tensor(cd.images[static_cast<size_t>(si)], cd.h, cd.w);
            FcnOutput out = fcn_forward(img, model.fcn_cfg, model.fcn, &hook);
            const LabelMap pm = argmax_prediction(out.pred);
            std::copy(pm.v.begin(), pm.v.end(),
                      pred_vol.v.begin() + static_cast<size_t>(si) * cd.h * cd.w);
            std::copy(cd.dense[static_cast<size_t>(si)].v.begin(),
                      cd.dense[static_cast<size_t>(si)].v.end(),
                      gt_vol.v.begin() + static_cast<size_t>(si) * cd.h * cd.w);
            if (!overlay_dir.empty()) {
                char name[64];
                std::snprintf(name, sizeof name, "/%s_slice_%03d.ppm", cd.id.c_str(), si);
                write_overlay(overlay_dir + name, cd.images[static_cast<size_t>(si)], pm, cd.h,
                              cd.w);
            }
        }
        for (int c = 1; c < cd.num_classes; ++c) {
            MetricsEntry e;
            e.case_id = cd.id;
            e.class_id = c;
            e.dice = dice3d(pred_vol, gt_vol, c);
            e.hd95_mm = hd95(pred_vol, gt_vol, c, cd.meta);
            report.entries.push_back(std::move(e));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// ablation

double median(std::vector<double> values) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<double> AblationSummary::pooled_dice(Preset p) const {
    std::vector<double> out;
    for (const auto& r : runs)
        if (r.preset == p) out.insert(out.end(), r.dice_values.begin(), r.dice_values.end());
    return out;
}

std::vector<double> AblationSummary::pooled_hd95(Preset p) const {
    std::vector<double> out;
    for (const auto& r : runs)
        if (r.preset == p) out.insert(out.end(), r.hd95_values.begin(), r.hd95_values.end());
    return out;
}

double AblationSummary::pooled_median_dice(Preset p) const { return median(pooled_dice(p)); }

double AblationSummary::pooled_median_hd95(Preset p) const { return median(pooled_hd95(p)); }

std::string AblationSummary::to_text() const {
    std::ostringstream os;
    char buf[160];
    for (const auto& r : runs) {
        if (r.failed) {
            os << "run preset=" << preset_name(r.preset) << " seed=" << r.seed
               << " FAILED: " << r.error << "\n";
            continue;
        }
        std::snprintf(buf, sizeof buf,
                      "run preset=%s seed=%llu median_dice=%.6f median_hd95=%.6f train_s=%.1f\n",
                      preset_name(r.preset).c_str(), static_cast<unsigned long long>(r.seed),
                      r.median_dice, r.median_hd95, r.train_seconds);
        os << buf;
    }
    for (Preset p : {Preset::pce_only, Preset::pce_mcrf, Preset::full}) {
        std::snprintf(buf, sizeof buf, "pooled preset=%s median_dice=%.6f median_hd95=%.6f\n",
                      preset_name(p).c_str(), pooled_median_dice(p), pooled_median_hd95(p));
        os << buf;
    }
    return os.str();
}

AblationSummary run_ablation(const TrainConfig& base, const std::vector<CaseData>& train_set,
                             const std::vector<CaseData>& eval_set, int n_seeds, int jobs,
                             const std::string& out_dir) {
    if (n_seeds < 1) throw std::invalid_argument("run_ablation: n_seeds must be >= 1");
    struct Job {
        Preset preset;
        uint64_t seed;
    };
    std::vector<Job> jobs_list;
    for (Preset p : {Preset::pce_only, Preset::pce_mcrf, Preset::full})
        for (int s = 1; s <= n_seeds; ++s) jobs_list.push_back({p, static_cast<uint64_t>(s)});

    AblationSummary summary;
    summary.runs.resize(jobs_list.size());
    if (!out_dir.empty()) fs::create_directories(out_dir);

    std::atomic<size_t> next{0};
    std::mutex io_mutex;
    auto worker = [&]() {
        for (;;) {
            const size_t idx = next.fetch_add(1);
            if (idx >= jobs_list.size()) return;
            const Job job = jobs_list[idx];
            TrainConfig cfg = base;
            cfg.preset = job.preset;
            cfg.seed = job.seed;
            AblationRun run;
            run.preset = job.preset;
            run.seed = job.seed;
            try {
                TrainResult tr = train(cfg, train_set);
                const MetricsReport report = evaluate(tr.model, eval_set);
                for (const auto& e : report.entries) {
                    run.dice_values.push_back(e.dice);
                    run.hd95_values.push_back(
                        e.hd95_mm ? *e.hd95_mm : std::numeric_limits<double>::infinity());
                }
                run.median_dice = median(run.dice_values);
                run.median_hd95 = median(run.hd95_values);
                run.train_seconds = tr.seconds;
                if (!out_dir.empty()) {
                    std::ostringstream rd;
                    rd << out_dir << "/" << preset_name(job.preset) << "_s" << job.seed;
                    fs::create_directories(rd.str());
                    save_model(rd.str() + "/checkpoint.ssck", tr.model, cfg.to_config());
                    std::ofstream(rd.str() + "/train_log.txt") << tr.log;
                    std::ofstream(rd.str() + "/report.txt") << report.to_text();
                }
            } catch (const std::exception& e) {
                run.failed = true;
                run.error = e.what();
                run.median_dice = 0.0;
                run.median_hd95 = std::numeric_limits<double>::infinity();
            }
            {
                std::lock_guard<std::mutex> lock(io_mutex);
                summary.runs[idx] = std::move(run);
                const AblationRun& r = summary.runs[idx];
                if (r.failed)
                    std::fprintf(stderr, "[ablate] %s seed %llu FAILED: %s\n",
                                 preset_name(job.preset).c_str(),
                                 static_cast<unsigned long long>(job.seed), r.error.c_str());
                else
                    std::fprintf(stderr, "[ablate] %s seed %llu done (%.1fs train)\n",
                                 preset_name(job.preset).c_str(),
                                 static_cast<unsigned long long>(job.seed), r.train_seconds);
            }
        }
    };
    const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(jobs_list.size())));
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (!out_dir.empty()) std::ofstream(out_dir + "/summary.txt") << summary.to_text();
    return summary;
}

}  // namespace ssseg

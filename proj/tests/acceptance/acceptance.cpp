// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "coughnet/coughnet.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace coughnet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

// Desk-resolution runs use a narrower network than the default 32 filters /
// 128 units; at 64x96 the full width collapses to dead ReLUs under Adam 1e-3.
const ArchitectureWidth kDeskWidth{8, 32};

struct Outcome {
    bool pass = true;
    std::ostringstream note;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            note << "[failed: " << what << "] ";
        }
    }
};

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor<double> random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(shape);
    for (auto& v : t.values()) v = uniform(rng, lo, hi);
    return t;
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("coughnet_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// ------------------------------------------------------------------------ 1

void metric_tables(Outcome& o) {
    const auto t0 = Clock::now();
    std::vector<std::pair<int, int>> pairs;
    pairs.insert(pairs.end(), 862, {0, 0});
    pairs.insert(pairs.end(), 138, {0, 1});
    pairs.insert(pairs.end(), 81, {1, 0});
    pairs.insert(pairs.end(), 919, {1, 1});
    const auto m = derive_metrics(confusion_matrix(pairs, 2, {"no_cough", "cough"}));
    const auto& cough = m.per_class[1];
    const double got[] = {100 * *cough.f1, 100 * *cough.sensitivity, 100 * *cough.specificity, 100 * *cough.precision,
                          100 * m.accuracy};
    const double published[] = {89.35, 91.9, 86.2, 86.94, 89.05};
    for (int i = 0; i < 5; ++i) {
        o.require(std::abs(got[i] - published[i]) <= 0.01, "detection value " + std::to_string(published[i]));
    }
    // precision, sensitivity -> F1 for pertussis, bronchitis, bronchiolitis
    const double rows[3][3] = {{93.87, 95.00, 94.43}, {78.95, 93.80, 85.74}, {100.00, 80.00, 88.89}};
    for (const auto& r : rows) {
        const double f1 = 100 * *f1_score(r[0] / 100, r[1] / 100);
        o.require(std::abs(f1 - r[2]) <= 0.01, "diagnosis F1 " + std::to_string(r[2]));
    }
    const double t = seconds_since(t0);
    o.require(t < 1.0, "runtime");
    char buf[128];
    std::snprintf(buf, sizeof buf, "F1 %.2f acc %.2f, %.3f s", got[0], got[4], t);
    o.note << buf;
}

// ------------------------------------------------------------------------ 2

void gradient_check(Outcome& o) {
    const auto t0 = Clock::now();
    const auto spec = build_detection_spec({1, 64, 96}, ArchitectureWidth{4, 16});
    auto model = make_model<double>(spec, FeatureProfile::desk(), 101);
    auto rng = make_rng({102});
    const auto input = random_tensor(spec.input, rng, 0.0, 1.0);
    oracle::jitter_biases(model, rng);
    const auto r = oracle::check_model_gradients(model, input, 1, DropoutKey{103, 1, 0, 0}, 1);
    const double t = seconds_since(t0);
    o.require(r.checked == spec.parameter_count(), "every parameter checked");
    o.require(r.max_relative_error < 1e-4, "max relative error");
    o.require(t < 60.0, "runtime");
    char buf[128];
    std::snprintf(buf, sizeof buf, "%zu parameters, max rel err %.2e, %.1f s", r.checked, r.max_relative_error, t);
    o.note << buf;
}

// ------------------------------------------------------------------------ 3

void layer_oracles(Outcome& o) {
    auto rng = make_rng({201});
    double conv_err = 0.0, pool_err = 0.0, softmax_err = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t C = 1 + uniform_index(rng, 3), F = 1 + uniform_index(rng, 4), K = 1 + uniform_index(rng, 5);
        const std::size_t H = K + uniform_index(rng, 12), W = K + uniform_index(rng, 12);
        const auto in = random_tensor({C, H, W}, rng);
        const auto w = random_tensor({F, C, K, K}, rng);
        const auto b = random_tensor({F}, rng);
        const auto got = nn::conv2d_forward(in, w, b, 1);
        const auto ref = oracle::conv2d(in, w, b, 1);
        if (got.shape() != ref.shape()) {
            conv_err = INFINITY;
        } else {
            for (std::size_t i = 0; i < ref.size(); ++i) conv_err = std::max(conv_err, std::abs(got[i] - ref[i]));
        }

        const auto pin = random_tensor({C, 2 + uniform_index(rng, 12), 2 + uniform_index(rng, 12)}, rng);
        const auto pooled = nn::maxpool2d_forward(pin).output;
        const auto pref = oracle::maxpool2(pin);
        if (pooled.shape() != pref.shape()) {
            pool_err = INFINITY;
        } else {
            for (std::size_t i = 0; i < pref.size(); ++i) pool_err = std::max(pool_err, std::abs(pooled[i] - pref[i]));
        }

        const std::size_t k = 2 + uniform_index(rng, 4);
        const auto z = random_tensor({k}, rng, -20, 20);
        const int label = static_cast<int>(uniform_index(rng, k));
        const auto s = nn::softmax_cross_entropy(z, label);
        // Independent softmax: exp(z - max) / sum.
        double zmax = z[0], sum = 0.0;
        for (std::size_t i = 0; i < k; ++i) zmax = std::max(zmax, z[i]);
        for (std::size_t i = 0; i < k; ++i) sum += std::exp(z[i] - zmax);
        for (std::size_t i = 0; i < k; ++i) {
            const double p = std::exp(z[i] - zmax) / sum;
            softmax_err = std::max(softmax_err, std::abs(s.dlogits[i] - (p - (static_cast<int>(i) == label ? 1 : 0))));
        }
    }
    o.require(conv_err <= 1e-12, "conv2d");
    o.require(pool_err <= 1e-12, "maxpool2d");
    o.require(softmax_err <= 1e-12, "softmax gradient");
    char buf[128];
    std::snprintf(buf, sizeof buf, "200 shapes, max err conv %.1e pool %.1e softmax %.1e", conv_err, pool_err, softmax_err);
    o.note << buf;
}

// ------------------------------------------------------------------------ 4

void shape_contract(Outcome& o) {
    const auto det = build_detection_spec({1, 288, 432});
    const auto dia = build_diagnosis_spec({1, 288, 432});
    o.require(det.flatten_size() == 226304, "detection flatten");
    o.require(det.propagate().back() == Shape{2}, "detection logits");
    o.require(dia.flatten_size() == 46080, "diagnosis flatten");
    o.require(dia.propagate().back() == Shape{3}, "diagnosis logits");
    o.note << "flatten " << det.flatten_size() << " / " << dia.flatten_size();
}

// -------------------------------------------------------------------- 5, 6

struct RunSummary {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
    std::size_t epochs = 0;
    std::size_t test = 0;
    double seconds = 0.0;
};

RunSummary synthetic_run(Task task, std::size_t per_class, std::uint64_t seed) {
    const auto t0 = Clock::now();
    const auto dir = scratch(std::string(to_string(task)));
    const auto profile = FeatureProfile::desk();
    const auto manifest = load_manifest(synth::write_corpus(dir, task, per_class, seed), task);
    const auto split = stratified_split(manifest, {}, seed);
    const auto load = [&](Split s) { return load_samples(manifest, split.indices(s), profile, {}, 1); };
    const auto train_set = load(Split::Train), val_set = load(Split::Val), test_set = load(Split::Test);

    TrainConfig config;
    config.seed = seed;
    config.batch_size = 32;
    config.max_epochs = 60;
    const auto spec = build_spec(task, {1, static_cast<std::size_t>(profile.image_h), static_cast<std::size_t>(profile.image_w)},
                                 kDeskWidth);
    const auto result = train<float>(spec, profile, train_set, val_set, config);
    const auto ev = evaluate(result.model, test_set);

    RunSummary r;
    r.accuracy = ev.report.accuracy;
    for (const auto& c : ev.report.per_class) r.macro_f1 += c.f1.value_or(0.0);
    r.macro_f1 /= static_cast<double>(ev.report.per_class.size());
    r.epochs = result.history.epochs.size();
    r.test = test_set.size();
    r.seconds = seconds_since(t0);
    fs::remove_all(dir);
    return r;
}

void synthetic_detection(Outcome& o) {
    const auto r = synthetic_run(Task::Detection, 200, 501);
    o.require(r.accuracy >= 0.95, "test accuracy");
    o.require(r.seconds <= 300.0, "wall time");
    char buf[128];
    std::snprintf(buf, sizeof buf, "test acc %.2f%% on %zu clips, %zu epochs, %.1f s", 100 * r.accuracy, r.test,
                  r.epochs, r.seconds);
    o.note << buf;
}

void synthetic_diagnosis(Outcome& o) {
    const auto r = synthetic_run(Task::Diagnosis, 90, 601);
    o.require(r.accuracy >= 0.90, "test accuracy");
    o.require(r.macro_f1 >= 0.88, "macro F1");
    o.require(r.seconds <= 300.0, "wall time");
    char buf[160];
    std::snprintf(buf, sizeof buf, "test acc %.2f%%, macro-F1 %.3f on %zu clips, %zu epochs, %.1f s", 100 * r.accuracy,
                  r.macro_f1, r.test, r.epochs, r.seconds);
    o.note << buf;
}

// ------------------------------------------------------------------------ 7

void overfit(Outcome& o) {
    const auto profile = FeatureProfile::desk();
    const auto samples = synth::featurized_samples(Task::Detection, 8, 701, profile);
    auto model = make_model<float>(build_detection_spec({1, 64, 96}, kDeskWidth), profile, 702);
    nn::AdamState<float> adam(nn::AdamConfig{}, model.params);
    const std::span<const Sample> all(samples);
    std::size_t reached = 0;
    for (std::size_t epoch = 1; epoch <= 200 && !reached; ++epoch) {
        for (const auto& batch : make_batches(all, 16, 703, epoch)) {
            const auto g = batch_gradient(model, batch, DropoutKey{703, epoch, 0, 0});
            nn::adam_step<float>(model.params, g.grads, adam);
        }
        if (evaluate(model, all).report.accuracy == 1.0) reached = epoch;
    }
    o.require(reached > 0, "100% train accuracy within 200 epochs");
    o.note << samples.size() << " samples, 100% at epoch " << reached;
}

// ------------------------------------------------------------------------ 8

void determinism(Outcome& o) {
    const auto profile = FeatureProfile::desk();
    const auto samples = synth::featurized_samples(Task::Detection, 20, 801, profile);
    const std::span<const Sample> train_set(samples.data(), 32), val_set(samples.data() + 32, 8);
    TrainConfig config;
    config.seed = 802;
    config.max_epochs = 3;
    config.threads = 1;
    const auto spec = build_detection_spec({1, 64, 96}, kDeskWidth);
    const auto a = encode_model(train<float>(spec, profile, train_set, val_set, config).model);
    const auto b = encode_model(train<float>(spec, profile, train_set, val_set, config).model);
    o.require(a == b, "byte-identical model files");

    const auto dir = scratch("persist");
    const auto model = decode_model(a);
    save_model(model, dir / "m.cghm");
    const auto loaded = load_model(dir / "m.cghm");
    bool same = true;
    for (const auto& s : samples) same = same && predict(model, s.image).probs.probs == predict(loaded, s.image).probs.probs;
    o.require(same, "round trip preserves predictions");

    auto corrupt = a;
    corrupt[corrupt.size() / 3] ^= 0x10;
    bool rejected = false;
    try {
        decode_model(corrupt);
    } catch (const Error& e) {
        rejected = e.code() == ErrorCode::CorruptModelFile;
    }
    o.require(rejected, "corrupt file rejected");
    fs::remove_all(dir);
    o.note << a.size() << "-byte model, " << samples.size() << " predictions compared";
}

// ------------------------------------------------------------------------ 9

DatasetManifest counted_manifest(Task task, const std::vector<std::size_t>& per_class) {
    DatasetManifest m{task, class_names(task), {}};
    for (std::size_t c = 0; c < per_class.size(); ++c)
        for (std::size_t i = 0; i < per_class[c]; ++i)
            m.entries.push_back({"c" + std::to_string(c) + "_" + std::to_string(i) + ".wav", static_cast<int>(c), {}, {}});
    return m;
}

void split_contract(Outcome& o) {
    const auto m = counted_manifest(Task::Detection, {993, 993});
    const auto a = stratified_split(m, {}, 901);
    for (int c = 0; c < 2; ++c) {
        std::size_t n[3] = {0, 0, 0};
        for (std::size_t i = 0; i < m.size(); ++i)
            if (m.entries[i].label == c) ++n[static_cast<int>(a.assignment[i])];
        o.require(n[static_cast<int>(Split::Train)] == 695 && n[static_cast<int>(Split::Val)] == 148 &&
                      n[static_cast<int>(Split::Test)] == 150,
                  "993 per class gives 695/148/150");
    }
    auto rng = make_rng({902});
    std::size_t bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const Task task = uniform_index(rng, 2) == 0 ? Task::Detection : Task::Diagnosis;
        std::vector<std::size_t> sizes(class_names(task).size());
        for (auto& s : sizes) s = 3 + uniform_index(rng, 300);
        auto man = counted_manifest(task, sizes);
        shuffle(man.entries, rng);
        const auto s = stratified_split(man, {}, static_cast<std::uint64_t>(trial));
        std::set<std::size_t> seen;
        std::size_t total = 0;
        for (Split which : {Split::Train, Split::Val, Split::Test}) {
            for (auto i : s.indices(which)) {
                seen.insert(i);
                ++total;
            }
        }
        if (total != man.size() || seen.size() != man.size()) ++bad;
    }
    o.require(bad == 0, "disjoint and exhaustive");
    o.note << "1000 random manifests, " << bad << " bad partitions";
}

// ----------------------------------------------------------------------- 10

void featurizer_properties(Outcome& o) {
    const auto profile = FeatureProfile::desk();
    const auto fb = mel_filterbank(profile);
    auto rng = make_rng({1001});

    double scale_err = 0.0, pixel_err = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        const auto clip = synth::detection_clip(trial % 2, rng);
        const auto base = power_to_db(mel_power(clip, profile, fb), profile.db_floor);
        AudioClip scaled = clip;
        const double k = std::pow(10.0, uniform(rng, -2.0, 0.5));
        for (auto& s : scaled.samples) s *= k;
        const auto db = power_to_db(mel_power(scaled, profile, fb), profile.db_floor);
        for (std::size_t i = 0; i < db.values.size(); ++i) scale_err = std::max(scale_err, std::abs(db.values[i] - base.values[i]));
        const auto img_a = featurize(clip, profile, fb), img_b = featurize(scaled, profile, fb);
        for (std::size_t i = 0; i < img_a.pixels.size(); ++i)
            pixel_err = std::max(pixel_err, std::abs(double(img_a.pixels[i]) - double(img_b.pixels[i])));
    }
    o.require(scale_err <= 1e-9, "amplitude-scale invariance of dB");
    o.require(pixel_err <= 1e-6, "amplitude-scale invariance of float32 pixels");

    AudioClip noise{std::vector<double>(30000), kPipelineRate, "noise"};
    for (auto& s : noise.samples) s = uniform(rng, -0.3, 0.3);
    AudioClip shifted = noise;
    shifted.samples.erase(shifted.samples.begin(), shifted.samples.begin() + static_cast<std::ptrdiff_t>(profile.hop));
    const auto a = mel_power(noise, profile, fb), b = mel_power(shifted, profile, fb);
    double shift_err = b.cols + 1 == a.cols ? 0.0 : INFINITY;
    for (std::size_t m = 0; m < a.rows && std::isfinite(shift_err); ++m)
        for (std::size_t t = 0; t < b.cols; ++t)
            shift_err = std::max(shift_err, std::abs(b(m, t) - a(m, t + 1)) / (1.0 + std::abs(a(m, t + 1))));
    o.require(shift_err <= 1e-9, "one-hop shift alignment");

    std::size_t out_of_range = 0, images = 0;
    for (int trial = 0; trial < 50; ++trial) {
        AudioClip clip{std::vector<double>(profile.frame_size + uniform_index(rng, 3 * 22050)), kPipelineRate, "fuzz"};
        const double amp = std::pow(10.0, uniform(rng, -8.0, 0.0));
        const int kind = static_cast<int>(uniform_index(rng, 4));
        for (std::size_t i = 0; i < clip.size(); ++i) {
            double v = amp * uniform(rng, -1, 1);
            if (kind == 1) v = 0.0;
            if (kind == 2) v = uniform01(rng) < 0.5 ? -1.0 : 1.0;
            if (kind == 3) v = amp * std::sin(0.01 * static_cast<double>(i) * static_cast<double>(trial + 1));
            clip.samples[i] = v;
        }
        const auto img = featurize(clip, profile, fb);
        ++images;
        for (float p : img.pixels)
            if (!(p >= 0.0f && p <= 1.0f)) ++out_of_range;
    }
    o.require(out_of_range == 0, "pixels in [0,1]");
    char buf[160];
    std::snprintf(buf, sizeof buf, "scale err %.1e, shift err %.1e, %zu fuzzed images in range", scale_err, shift_err,
                  images);
    o.note << buf;
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
        {"metric-table consistency", metric_tables},
        {"full-model gradient check", gradient_check},
        {"layer oracle equivalence", layer_oracles},
        {"shape contract", shape_contract},
        {"synthetic detection run", synthetic_detection},
        {"synthetic diagnosis run", synthetic_diagnosis},
        {"overfit sixteen samples", overfit},
        {"determinism and persistence", determinism},
        {"split contract", split_contract},
        {"featurizer properties", featurizer_properties},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            criteria[i].second(o);
        } catch (const std::exception& e) {
            o.pass = false;
            o.note << "threw: " << e.what();
        }
        failures += o.pass ? 0 : 1;
        std::printf("criterion %zu: %s  %s (%s)\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                    o.note.str().c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}

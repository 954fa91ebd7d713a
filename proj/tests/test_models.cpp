#include <gtest/gtest.h>

#include <filesystem>

#include "coughnet/model.hpp"
#include "coughnet/model_io.hpp"
#include "coughnet/rng.hpp"

using namespace coughnet;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::InvalidArgument;
}

SpectrogramImage random_image(int h, int w, Rng& rng) {
    SpectrogramImage img{h, w, std::vector<float>(static_cast<std::size_t>(h * w)), FeatureProfile::desk()};
    for (auto& p : img.pixels) p = static_cast<float>(uniform01(rng));
    return img;
}

std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("coughnet_models_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST(DetectionSpec, FullResolutionShapes) {
    const auto spec = build_detection_spec({1, 288, 432});
    const auto shapes = spec.propagate();
    EXPECT_EQ(spec.flatten_size(), 68u * 104u * 32u);
    EXPECT_EQ(spec.flatten_size(), 226304u);
    EXPECT_EQ(shapes.back(), (Shape{2}));
    EXPECT_EQ(spec.layers.size(), 16u);
    EXPECT_TRUE(std::holds_alternative<layer::MaxPool2d>(spec.layers.front()));
    EXPECT_TRUE(std::holds_alternative<layer::Softmax>(spec.layers.back()));
}

TEST(DetectionSpec, DeskResolutionFlatten) {
    EXPECT_EQ(build_detection_spec({1, 64, 96}).flatten_size(), 12u * 20u * 32u);
}

TEST(DetectionSpec, ParameterCountMatchesLayerFormula) {
    // conv: F*C*K*K + F, dense: M*N + M
    const std::size_t expected = (32 * 1 * 25 + 32) + (32 * 32 * 25 + 32) + (128 * 226304 + 128) + (128 * 128 + 128) +
                                 (2 * 128 + 2);
    EXPECT_EQ(build_detection_spec({1, 288, 432}).parameter_count(), expected);
    EXPECT_EQ(expected, 29010274u);
}

TEST(DiagnosisSpec, FullResolutionShapes) {
    const auto spec = build_diagnosis_spec({1, 288, 432});
    EXPECT_EQ(spec.flatten_size(), 30u * 48u * 32u);
    EXPECT_EQ(spec.propagate().back(), (Shape{3}));
    EXPECT_EQ(spec.class_names, (std::vector<std::string>{"bronchiolitis", "bronchitis", "pertussis"}));
    EXPECT_EQ(task_of(spec), Task::Diagnosis);
    EXPECT_EQ(task_of(build_detection_spec({1, 64, 96})), Task::Detection);
}

TEST(Specs, RejectInputsBelowTheMinimum) {
    EXPECT_EQ(code_of([] { build_detection_spec({1, 23, 96}); }), ErrorCode::InputTooSmall);
    EXPECT_NO_THROW(build_detection_spec({1, 24, 24}).propagate());
    EXPECT_EQ(code_of([] { build_diagnosis_spec({1, 64, 55}); }), ErrorCode::InputTooSmall);
    EXPECT_NO_THROW(build_diagnosis_spec({1, 56, 56}).propagate());
    EXPECT_EQ(code_of([] { build_detection_spec({3, 64, 96}); }), ErrorCode::ShapeMismatch);
}

TEST(Specs, PropagationHoldsAcrossRandomSizes) {
    auto rng = make_rng({31});
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t h = 56 + uniform_index(rng, 300), w = 56 + uniform_index(rng, 300);
        const auto det = build_detection_spec({1, h, w}, ArchitectureWidth{8, 16});
        const std::size_t dh = ((h / 2) - 8) / 2, dw = ((w / 2) - 8) / 2;
        ASSERT_EQ(det.flatten_size(), 8 * dh * dw);
        const auto dia = build_diagnosis_spec({1, h, w}, ArchitectureWidth{8, 16});
        ASSERT_EQ(dia.flatten_size(), 8 * ((dh - 8) / 2) * ((dw - 8) / 2));
    }
}

TEST(Specs, MalformedLayerListNamesTheLayer) {
    auto spec = build_detection_spec({1, 64, 96});
    spec.layers.pop_back();
    spec.layers.pop_back();
    spec.layers.push_back(layer::Dense{5});
    spec.layers.push_back(layer::Softmax{});
    try {
        spec.propagate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    }
    auto bad = build_detection_spec({1, 64, 96});
    bad.layers.insert(bad.layers.begin() + 1, layer::Conv2d{4, 70, 1});
    try {
        bad.propagate();
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
    }
}

TEST(Specs, LayerTextRoundTrip) {
    for (const auto& spec : {build_detection_spec({1, 64, 96}), build_diagnosis_spec({1, 288, 432}, {16, 64})})
        for (const auto& l : spec.layers) EXPECT_EQ(layer_from_text(layer_to_text(l)), l);
}

TEST(Predict, ZeroFinalLayerGivesUniformProbsAndClassZero) {
    auto model = make_model<float>(build_diagnosis_spec({1, 64, 96}, {4, 8}), FeatureProfile::desk(), 2);
    const auto n = model.params.size();
    model.params[n - 2].fill(0.0f);
    model.params[n - 1].fill(0.0f);
    auto rng = make_rng({32});
    const auto p = predict(model, random_image(64, 96, rng));
    EXPECT_EQ(p.label, 0);
    for (double v : p.probs.probs) EXPECT_NEAR(v, 1.0 / 3.0, 1e-7);
    EXPECT_EQ(p.probs.label_names, model.spec.class_names);
}

TEST(Predict, ProbabilitiesSumToOneAndRepeat) {
    const auto model = make_model<float>(build_detection_spec({1, 64, 96}, {4, 16}), FeatureProfile::desk(), 3);
    auto rng = make_rng({33});
    for (int i = 0; i < 10; ++i) {
        const auto img = random_image(64, 96, rng);
        const auto a = predict(model, img);
        const auto b = predict(model, img);
        EXPECT_EQ(a.probs.probs, b.probs.probs);
        double sum = 0.0;
        for (double v : a.probs.probs) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            sum += v;
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
    }
    EXPECT_EQ(code_of([&] { predict(model, random_image(64, 90, rng)); }), ErrorCode::ShapeMismatch);
}

TEST(Predict, ArgmaxIgnoresLogitShift) {
    auto rng = make_rng({34});
    for (int i = 0; i < 100; ++i) {
        std::vector<double> v(3);
        for (auto& x : v) x = uniform(rng, -5, 5);
        auto shifted = v;
        const double c = uniform(rng, -100, 100);
        for (auto& x : shifted) x += c;
        EXPECT_EQ(argmax(v), argmax(shifted));
    }
    EXPECT_EQ(argmax({0.5, 0.5}), 0);
}

TEST(MakeModel, SeedDeterminesWeights) {
    const auto spec = build_detection_spec({1, 64, 96}, {4, 16});
    const auto a = make_model<float>(spec, FeatureProfile::desk(), 7);
    const auto b = make_model<float>(spec, FeatureProfile::desk(), 7);
    const auto c = make_model<float>(spec, FeatureProfile::desk(), 8);
    EXPECT_EQ(a.params, b.params);
    EXPECT_NE(a.params, c.params);
    // He-uniform bound for the first conv: sqrt(6 / 25)
    const double bound = std::sqrt(6.0 / 25.0);
    for (float v : a.params[0].values()) EXPECT_LE(std::abs(v), bound);
}

TEST(ModelFile, RoundTripPreservesEverything) {
    const auto dir = temp_dir("roundtrip");
    auto model = make_model<float>(build_diagnosis_spec({1, 64, 96}, {4, 16}), FeatureProfile::desk(), 11);
    model.meta.epochs_trained = 17;
    model.meta.best_epoch = 9;
    model.meta.best_val_loss = 0.1234567890123;
    save_model(model, dir / "a.cghm");
    const auto loaded = load_model(dir / "a.cghm");
    EXPECT_EQ(loaded.spec, model.spec);
    EXPECT_EQ(loaded.profile, model.profile);
    EXPECT_EQ(loaded.meta, model.meta);
    EXPECT_EQ(loaded.params, model.params);
    save_model(loaded, dir / "b.cghm");
    EXPECT_EQ(bytes::read_file(dir / "a.cghm"), bytes::read_file(dir / "b.cghm"));

    auto rng = make_rng({35});
    for (int i = 0; i < 100; ++i) {
        const auto img = random_image(64, 96, rng);
        ASSERT_EQ(predict(model, img).probs.probs, predict(loaded, img).probs.probs);
    }
    std::filesystem::remove_all(dir);
}

TEST(ModelFile, RejectsCorruption) {
    const auto model = make_model<float>(build_detection_spec({1, 64, 96}, {4, 16}), FeatureProfile::desk(), 12);
    const auto good = encode_model(model);
    EXPECT_EQ(good.size() > 4 && std::string(good.begin(), good.begin() + 4) == "CGHM", true);

    auto bad_magic = good;
    bad_magic[0] = 'X';
    EXPECT_EQ(code_of([&] { decode_model(bad_magic); }), ErrorCode::CorruptModelFile);

    auto flipped = good;
    flipped[flipped.size() / 2] ^= 0x01;
    EXPECT_EQ(code_of([&] { decode_model(flipped); }), ErrorCode::CorruptModelFile);

    auto truncated = good;
    truncated.resize(truncated.size() - 10);
    EXPECT_EQ(code_of([&] { decode_model(truncated); }), ErrorCode::CorruptModelFile);

    // A future version with a valid checksum.
    auto future = good;
    future[4] = 2;
    future.resize(future.size() - 4);
    const auto crc = bytes::crc32(future);
    for (int i = 0; i < 4; ++i) future.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
    EXPECT_EQ(code_of([&] { decode_model(future); }), ErrorCode::VersionMismatch);

    EXPECT_EQ(code_of([] { load_model("/nonexistent/model.cghm"); }), ErrorCode::IoError);
}

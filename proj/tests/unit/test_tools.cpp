#include <gtest/gtest.h>

#include <random>

#include "ode/error.hpp"
#include "ode/raster.hpp"
#include "ode/tools.hpp"
#include "support/support.hpp"

using namespace ode;
using ode::testing::FakeProvider;
using ode::testing::test_png;

namespace {

struct Fixture {
    ImageBank bank{"t"};
    ToolEnv env;
    std::shared_ptr<FakeProvider> provider = std::make_shared<FakeProvider>(2);
    std::shared_ptr<TranscriptSandbox> sandbox = std::make_shared<TranscriptSandbox>();

    Fixture() {
        env.provider = provider;
        env.sandbox = sandbox;
        bank.register_image(test_png(40, 20), "image/png", ImageOrigin::initial());
    }

    ToolResult call(const std::string& name, json args, CallSite site = {}) {
        return dispatch(ToolCall{name, std::move(args), "c-0-0"}, bank, env, site);
    }
};

Raster raster_of(const ImageBank& bank, std::size_t i) {
    const auto& rec = bank.resolve({i});
    return decode_image(*rec.payload(), rec.mime);
}

}  // namespace

TEST(Tools, AliasesNormalize) {
    EXPECT_EQ(normalize_tool_name("web_fetch"), ToolName::visit);
    EXPECT_EQ(normalize_tool_name("link_reader"), ToolName::visit);
    EXPECT_EQ(normalize_tool_name("zoom_in"), ToolName::zoom_in);
    EXPECT_FALSE(normalize_tool_name("crop"));
    for (auto t : kAllTools) EXPECT_EQ(normalize_tool_name(to_string(t)), t);
}

TEST(Tools, UnknownToolThrows) {
    Fixture f;
    try {
        f.call("teleport", json::object());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::UnknownTool);
    }
}

TEST(Tools, ZoomRegistersNewHandleWithProvenance) {
    Fixture f;
    auto r = f.call("zoom_in", {{"image", "<image:0>"}, {"box", {0.25, 0.0, 0.75, 0.5}}}, {3, 1});
    ASSERT_EQ(r.status, ToolStatus::ok) << r.text;
    ASSERT_EQ(r.new_handles.size(), 1u);
    EXPECT_EQ(r.new_handles[0].index, 1u);
    EXPECT_EQ(r.text, "zoom_in on <image:0> produced <image:1> (20x10).");
    const auto& rec = f.bank.resolve({1});
    EXPECT_EQ(rec.origin, ImageOrigin::tool("zoom_in", "c-0-0"));
    EXPECT_EQ(rec.created_turn, 3);

    // the crop is the source window starting at (10, 0)
    auto src = raster_of(f.bank, 0);
    auto out = raster_of(f.bank, 1);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < src.channels; ++c) ASSERT_EQ(out.at(x, y)[c], src.at(x + 10, y)[c]);
}

TEST(Tools, RegionAliasAndClamp) {
    Fixture f;
    auto r = f.call("zoom_in", {{"image_ref", "<image:0>"}, {"region", {-1, -1, 2, 2}}});
    ASSERT_EQ(r.status, ToolStatus::ok) << r.text;
    EXPECT_EQ(raster_of(f.bank, 1), raster_of(f.bank, 0));
}

TEST(Tools, ZoomFailures) {
    Fixture f;
    auto degenerate = f.call("zoom_in", {{"image", "<image:0>"}, {"box", {0.5, 0.5, 0.5, 0.9}}});
    EXPECT_EQ(degenerate.error_kind, "DegenerateRegion");
    auto missing = f.call("zoom_in", {{"image", "<image:7>"}, {"box", {0, 0, 1, 1}}});
    EXPECT_EQ(missing.error_kind, "UnknownHandle");
    auto bad_box = f.call("zoom_in", {{"image", "<image:0>"}, {"box", {0, 0, 1}}});
    EXPECT_EQ(bad_box.error_kind, "InvalidArgument");
    auto bad_ref = f.call("zoom_in", {{"image", "<image: 0>"}, {"box", {0, 0, 1, 1}}});
    EXPECT_EQ(bad_ref.error_kind, "InvalidArgument");
    EXPECT_EQ(f.bank.size(), 1u);
    EXPECT_EQ(degenerate.status, ToolStatus::error);
    EXPECT_NE(degenerate.text.find("error[DegenerateRegion]"), std::string::npos);
}

TEST(Tools, HandlesRegisteredThisTurnAreNotVisible) {
    Fixture f;
    f.call("zoom_in", {{"image", "<image:0>"}, {"box", {0, 0, 0.5, 0.5}}}, {0, 1});
    ASSERT_EQ(f.bank.size(), 2u);
    auto r = f.call("flip", {{"image", "<image:1>"}, {"axis", "vertical"}}, {0, 1});
    EXPECT_EQ(r.error_kind, "UnknownHandle");
    auto later = f.call("flip", {{"image", "<image:1>"}, {"axis", "vertical"}}, {1, 2});
    EXPECT_EQ(later.status, ToolStatus::ok);
}

TEST(Tools, RotationMapsPixelsClockwise) {
    Fixture f;
    auto src = raster_of(f.bank, 0);
    for (int deg : {90, 180, 270}) {
        auto r = f.call("rotation", {{"image", "<image:0>"}, {"degrees", deg}});
        ASSERT_EQ(r.status, ToolStatus::ok) << r.text;
        auto out = raster_of(f.bank, r.new_handles[0].index);
        for (int y = 0; y < src.height; ++y) {
            for (int x = 0; x < src.width; ++x) {
                // rotate the pixel centre about the image centre, clockwise in screen coordinates
                int nx = 0, ny = 0;
                if (deg == 90) nx = src.height - 1 - y, ny = x;
                if (deg == 180) nx = src.width - 1 - x, ny = src.height - 1 - y;
                if (deg == 270) nx = y, ny = src.width - 1 - x;
                ASSERT_EQ(out.at(nx, ny)[0], src.at(x, y)[0]) << deg;
            }
        }
    }
    EXPECT_EQ(f.call("rotation", {{"image", "<image:0>"}, {"angle", 45}}).error_kind, "UnsupportedAngle");
    EXPECT_EQ(f.call("rotation", {{"image", "<image:0>"}, {"degrees", 90.5}}).error_kind, "UnsupportedAngle");
}

TEST(Tools, FourQuarterTurnsAndDoubleFlipAreIdentity) {
    Fixture f;
    std::string ref = "<image:0>";
    for (int i = 0; i < 4; ++i) {
        auto r = f.call("rotation", {{"image", ref}, {"degrees", 90}});
        ref = r.new_handles.at(0).render();
    }
    EXPECT_EQ(raster_of(f.bank, 4), raster_of(f.bank, 0));
    for (std::string axis : {"horizontal", "vertical"}) {
        auto a = f.call("flip", {{"image", "<image:0>"}, {"direction", axis}});
        auto b = f.call("flip", {{"image", a.new_handles.at(0).render()}, {"axis", axis}});
        EXPECT_EQ(raster_of(f.bank, b.new_handles.at(0).index), raster_of(f.bank, 0));
        EXPECT_NE(raster_of(f.bank, a.new_handles.at(0).index), raster_of(f.bank, 0));
    }
    EXPECT_EQ(f.call("flip", {{"image", "<image:0>"}, {"axis", "diagonal"}}).error_kind, "InvalidArgument");
}

TEST(Tools, TextSearchRendersAndCaps) {
    Fixture f;
    f.provider->text_answers["spoof"] =
        TextSearchResponse{{SearchHit{"see <image:0>", "https://a.example/x", "also <image:3>"}}};
    auto r = f.call("web_search", {{"query", "spoof"}});
    ASSERT_EQ(r.status, ToolStatus::ok);
    EXPECT_TRUE(parse_refs(r.text).empty()) << r.text;
    EXPECT_NE(r.text.find("https://a.example/x"), std::string::npos);

    f.env.caps.observation_cap = 30;
    auto capped = f.call("scholar_search", {{"q", "anything"}});
    EXPECT_LE(capped.text.size(), 30 + kTruncationMarker.size());
    EXPECT_TRUE(capped.text.ends_with(kTruncationMarker));
    EXPECT_EQ(f.call("web_search", {{"query", "  "}}).error_kind, "EmptyQuery");
    EXPECT_EQ(f.call("web_search", {{"query", 3}}).error_kind, "InvalidArgument");
}

TEST(Tools, CapObservationKeepsUtf8Whole) {
    std::string text = "ab\xC3\xA9\xC3\xA9";  // ab + two 2-byte characters
    auto cut = cap_observation(text, 3);
    EXPECT_EQ(cut, std::string("ab") + std::string(kTruncationMarker));
    EXPECT_EQ(cap_observation(text, 100), text);
}

TEST(Tools, ImageSearchRegistersReturnedImages) {
    Fixture f;
    auto r = f.call("image_search", {{"query", "harbor cranes"}}, {2, 1});
    ASSERT_EQ(r.status, ToolStatus::ok) << r.text;
    ASSERT_EQ(r.new_handles.size(), 2u);
    EXPECT_NE(r.text.find("Returned images: <image:1> <image:2>"), std::string::npos);
    for (auto h : r.new_handles) {
        EXPECT_EQ(f.bank.resolve(h).origin.tool_name, "image_search");
        EXPECT_EQ(f.bank.resolve(h).created_turn, 2);
    }
}

TEST(Tools, ImageQueryDropsWhatTheBankCannotHold) {
    ImageBank bank("small", {.capacity = 2});
    bank.register_image(test_png(8, 8), "image/png", ImageOrigin::initial());
    ToolEnv env;
    env.provider = std::make_shared<FakeProvider>(3);
    auto r = dispatch({"visual_search", {{"image", "<image:0>"}}, "v"}, bank, env);
    ASSERT_EQ(r.status, ToolStatus::ok) << r.text;
    EXPECT_EQ(r.new_handles.size(), 1u);
    EXPECT_NE(r.text.find("2 images not registered"), std::string::npos);
}

TEST(Tools, VisitValidatesUrl) {
    Fixture f;
    auto ok = f.call("web_fetch", {{"url", "https://example.org/page"}});
    EXPECT_EQ(ok.status, ToolStatus::ok);
    EXPECT_NE(ok.text.find("https://example.org/page"), std::string::npos);
    EXPECT_EQ(f.call("visit", {{"url", "example.org"}}).error_kind, "MalformedUrl");
    EXPECT_EQ(f.call("visit", {{"url", "ftp://example.org"}}).error_kind, "MalformedUrl");
}

TEST(Tools, MissingProviderIsAnObservation) {
    Fixture f;
    f.env.provider.reset();
    EXPECT_EQ(f.call("web_search", {{"query", "x"}}).error_kind, "ProviderUnavailable");
    EXPECT_EQ(f.call("visual_search", {{"image", "<image:0>"}}).error_kind, "ProviderUnavailable");
}

TEST(Tools, RunCodeOutcomes) {
    Fixture f;
    f.sandbox->add("print(1)", {"", ExecStatus::ok, "1\n", "", 0.01});
    f.sandbox->add("warn()", {"", ExecStatus::ok, "out", "warned\n", 0.01});
    f.sandbox->add("1/0", {"", ExecStatus::error, "", "ZeroDivisionError\n", 0.01});
    f.sandbox->add("while True: pass", {"", ExecStatus::timeout, "", "", 10.0});

    EXPECT_EQ(f.call("python_code", {{"code", "print(1)"}}).text, "1\n");
    EXPECT_EQ(f.call("python_code", {{"source", "warn()"}}).text, "out\nwarned\n");
    auto err = f.call("python_code", {{"code", "1/0"}});
    EXPECT_EQ(err.status, ToolStatus::error);
    EXPECT_EQ(err.error_kind, "ExecutionError");
    EXPECT_NE(err.text.find("ZeroDivisionError"), std::string::npos);
    EXPECT_EQ(f.call("python_code", {{"code", "while True: pass"}}).error_kind, "Timeout");
    EXPECT_EQ(f.call("python_code", {{"code", "unknown()"}}).error_kind, "SandboxUnavailable");
    EXPECT_EQ(f.call("python_code", {{"code", "\n"}}).error_kind, "InvalidArgument");
    f.env.sandbox.reset();
    EXPECT_EQ(f.call("python_code", {{"code", "print(1)"}}).error_kind, "SandboxUnavailable");
}

TEST(Tools, CatalogNamesEveryTool) {
    auto catalog = tool_catalog();
    for (auto t : kAllTools) EXPECT_NE(catalog.find(std::string(to_string(t)) + " {"), std::string::npos);
}

TEST(Tools, TransformsNeverMutateTheSource) {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Fixture f;
    auto before = *f.bank.resolve({0}).payload();
    for (int i = 0; i < 50; ++i) {
        double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
        f.call("zoom_in", {{"image", "<image:0>"}, {"box", {std::min(a, b), std::min(c, d), std::max(a, b),
                                                             std::max(c, d)}}});
    }
    EXPECT_EQ(*f.bank.resolve({0}).payload(), before);
    for (std::size_t i = 1; i < f.bank.size(); ++i) EXPECT_EQ(f.bank.resolve({i}).handle.index, i);
}

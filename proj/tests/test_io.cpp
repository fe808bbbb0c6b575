#include <gtest/gtest.h>

#include "commands.hpp"
#include "rfa/gradcam.hpp"
#include "rfa/idx_dataset.hpp"
#include "rfa/run_config.hpp"
#include "rfa/tensor_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

using namespace rfa;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("rfa_io_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

} // namespace

TEST(IdxTest, RoundTripIsExact) {
    const SyntheticBars bars = make_oriented_bars(32, 16, 21);
    TempDir dir;
    save_idx(bars.data, dir.file("im.idx"), dir.file("lb.idx"));
    const IdxDataset back = load_idx(dir.file("im.idx"), dir.file("lb.idx"));
    EXPECT_EQ(back.images.shape, bars.data.images.shape);
    EXPECT_EQ(back.images.data, bars.data.images.data); // generator quantizes to the byte grid
    EXPECT_EQ(back.labels, bars.data.labels);
}

TEST(IdxTest, CorruptMagicCitesOffsetAndExpectedValue) {
    TempDir dir;
    std::ofstream bad(dir.file("bad.idx"), std::ios::binary);
    const char junk[16] = {0x12, 0x34, 0x56, 0x78};
    bad.write(junk, sizeof(junk));
    bad.close();
    try {
        load_idx(dir.file("bad.idx"), dir.file("bad.idx"));
        FAIL() << "expected a magic error";
    } catch (const Error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("offset 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("0x00000803"), std::string::npos) << msg;
    }
}

TEST(IdxTest, TruncatedImagePayloadIsACleanParseError) {
    const SyntheticBars bars = make_oriented_bars(8, 16, 22);
    TempDir dir;
    save_idx(bars.data, dir.file("im.idx"), dir.file("lb.idx"));
    // chop the image file mid-payload
    const auto full_size = fs::file_size(dir.file("im.idx"));
    fs::resize_file(dir.file("im.idx"), full_size - 100);
    EXPECT_THROW(load_idx(dir.file("im.idx"), dir.file("lb.idx")), Error);
}

TEST(IdxTest, LabelCountMismatchIsRejected) {
    const SyntheticBars a = make_oriented_bars(8, 16, 23);
    const SyntheticBars b = make_oriented_bars(9, 16, 23);
    TempDir dir;
    save_idx(a.data, dir.file("im.idx"), dir.file("lb8.idx"));
    save_idx(b.data, dir.file("im9.idx"), dir.file("lb9.idx"));
    EXPECT_THROW(load_idx(dir.file("im.idx"), dir.file("lb9.idx")), Error);
}

TEST(RunConfigTest, ParsesCommentsAndOverrides) {
    TempDir dir;
    {
        std::ofstream cfg(dir.file("run.cfg"));
        cfg << "# a comment line\n"
            << "seed = 7   # trailing comment\n"
            << "factory=rfa\n"
            << "\n"
            << "lr0 = 0.125\n";
    }
    RunConfig config = RunConfig::from_file(dir.file("run.cfg"));
    EXPECT_EQ(config.get_int("seed", 0), 7);
    EXPECT_EQ(config.get("factory", ""), "rfa");
    EXPECT_DOUBLE_EQ(config.get_double("lr0", 0.0), 0.125);

    config.set("seed", "9"); // flag override
    EXPECT_EQ(config.get_int("seed", 0), 9);
    EXPECT_NE(config.resolved().find("factory=rfa"), std::string::npos);
}

TEST(RunConfigTest, UnknownKeysAreRejected) {
    RunConfig config;
    EXPECT_THROW(config.set("sneaky", "1"), Error);
    TempDir dir;
    {
        std::ofstream cfg(dir.file("run.cfg"));
        cfg << "not_a_key=1\n";
    }
    EXPECT_THROW(RunConfig::from_file(dir.file("run.cfg")), Error);
}

TEST(RunConfigTest, MalformedValuesAreRejected) {
    RunConfig config;
    config.set("seed", "12x");
    EXPECT_THROW(config.get_int("seed", 0), Error);
    config.set("lr0", "fast");
    EXPECT_THROW(config.get_double("lr0", 0.0), Error);
}

TEST(PgmTest, RoundTripAndFormat) {
    SeededRng rng(24);
    const Tensor map = rand_uniform({1, 1, 6, 5}, rng);
    TempDir dir;
    write_pgm(dir.file("m.pgm"), map);

    std::ifstream is(dir.file("m.pgm"), std::ios::binary);
    std::string magic;
    is >> magic;
    EXPECT_EQ(magic, "P5");
    int w, h, maxval;
    is >> w >> h >> maxval;
    EXPECT_EQ(w, 5);
    EXPECT_EQ(h, 6);
    EXPECT_EQ(maxval, 255);

    const Tensor back = read_pgm(dir.file("m.pgm"));
    ASSERT_EQ(back.shape, map.shape);
    for (size_t i = 0; i < map.data.size(); ++i)
        EXPECT_NEAR(back.data[i], map.data[i], 0.5 / 255.0 + 1e-12); // byte quantization
}

TEST(GradCamTest, ZeroInputYieldsAllZeroHeatmap) {
    SeededRng rng(25);
    Network net = build_model(tinynet_spec(ConvKind::standard, 2, 1), rng);
    const GradCamResult cam = grad_cam(net, zeros({1, 1, 16, 16}), 0);
    for (double v : cam.heat.data) EXPECT_EQ(v, 0.0);

    TempDir dir;
    write_pgm(dir.file("zero.pgm"), cam.heat);
    const Tensor back = read_pgm(dir.file("zero.pgm"));
    for (double v : back.data) EXPECT_EQ(v, 0.0);
}

TEST(GradCamTest, HeatRangeAndClassValidation) {
    SeededRng rng(26);
    Network net = build_model(tinynet_spec(ConvKind::standard, 2, 1), rng);
    const SyntheticBars bars = make_oriented_bars(1, 16, 27);
    Tensor image = zeros({1, 1, 16, 16});
    std::copy_n(bars.data.images.data.begin(), 256, image.data.begin());

    const GradCamResult cam = grad_cam(net, image, 1);
    for (double v : cam.heat.data) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
    EXPECT_THROW(grad_cam(net, image, 2), Error);
    EXPECT_THROW(grad_cam(net, image, -1), Error);
}

TEST(CommandTest, GradcheckCsvShape) {
    RunConfig config;
    config.set("seed", "3");
    std::ostringstream out;
    const int code = cmd::cmd_gradcheck(config, out);
    EXPECT_EQ(code, 0);
    // header + ~20 rows, all flagged pass
    int rows = 0;
    std::istringstream lines(out.str());
    std::string line;
    bool saw_header = false;
    while (std::getline(lines, line)) {
        if (line == "op,max_rel_err,pass") saw_header = true;
        else if (saw_header && !line.empty()) {
            EXPECT_NE(line.find(",1"), std::string::npos) << line;
            ++rows;
        }
    }
    EXPECT_TRUE(saw_header);
    EXPECT_GE(rows, 15);
}

TEST(CommandTest, EquivalenceExitsZero) {
    RunConfig config;
    std::ostringstream out;
    EXPECT_EQ(cmd::cmd_equivalence(config, out), 0);
    EXPECT_NE(out.str().find("all checks passed"), std::string::npos);
}

TEST(CommandTest, CountReportsExactResnetParams) {
    RunConfig config;
    config.set("model", "resnet18");
    config.set("factory", "standard");
    std::ostringstream out;
    EXPECT_EQ(cmd::cmd_count(config, out), 0);
    EXPECT_NE(out.str().find("11689512"), std::string::npos);
}

TEST(CommandTest, TrainedCheckpointEvaluatesIdentically) {
    TempDir dir;
    RunConfig config;
    config.set("seed", "5");
    config.set("train_count", "128");
    config.set("test_count", "64");
    config.set("epochs", "1");
    config.set("out", dir.path.string());
    std::ostringstream train_out;
    ASSERT_EQ(cmd::cmd_train(config, train_out), 0);
    ASSERT_TRUE(fs::exists(dir.path / "checkpoint.rfat"));
    ASSERT_TRUE(fs::exists(dir.path / "train_log.csv"));

    RunConfig eval_config;
    eval_config.set("seed", "5");
    eval_config.set("test_count", "64");
    eval_config.set("checkpoint", (dir.path / "checkpoint.rfat").string());
    std::ostringstream eval_out;
    ASSERT_EQ(cmd::cmd_eval(eval_config, eval_out), 0);

    // the train-side test evaluation and the reloaded checkpoint agree
    const std::string trained = train_out.str();
    const std::string evaled = eval_out.str();
    const auto pick = [](const std::string& s, const std::string& key) {
        const auto pos = s.find(key);
        EXPECT_NE(pos, std::string::npos) << s;
        return s.substr(pos + key.size(), 8);
    };
    EXPECT_EQ(pick(trained, "test_top1="), pick(evaled, "top1="));
}

TEST(CommandTest, GradcheckMutationAndTightToleranceFail) {
    RunConfig mutated;
    mutated.set("mutate", "conv_backward");
    std::ostringstream out;
    EXPECT_EQ(cmd::cmd_gradcheck(mutated, out), 1);
    EXPECT_NE(out.str().find("conv2d"), std::string::npos);

    RunConfig tight;
    tight.set("tol", "1e-12");
    std::ostringstream out2;
    EXPECT_EQ(cmd::cmd_gradcheck(tight, out2), 1);

    RunConfig bogus;
    EXPECT_THROW(bogus.set("mutate", "relu_backward"); cmd::cmd_gradcheck(bogus, out2), Error);
}

TEST(CommandTest, TrainsFromIdxFiles) {
    const SyntheticBars bars = make_oriented_bars(64, 16, 31);
    TempDir dir;
    save_idx(bars.data, dir.file("im.idx"), dir.file("lb.idx"));

    RunConfig config;
    config.set("images", dir.file("im.idx"));
    config.set("labels", dir.file("lb.idx"));
    config.set("epochs", "1");
    config.set("batch", "16");
    std::ostringstream out;
    EXPECT_EQ(cmd::cmd_train(config, out), 0);
    EXPECT_NE(out.str().find("epoch,lr,loss,top1,top5"), std::string::npos);
}

TEST(CommandTest, GradcamWritesValidHeatmap) {
    TempDir dir;
    RunConfig train_config;
    train_config.set("seed", "8");
    train_config.set("train_count", "128");
    train_config.set("test_count", "32");
    train_config.set("epochs", "1");
    train_config.set("out", dir.path.string());
    std::ostringstream out;
    ASSERT_EQ(cmd::cmd_train(train_config, out), 0);

    RunConfig cam_config;
    cam_config.set("seed", "8");
    cam_config.set("test_count", "32");
    cam_config.set("checkpoint", (dir.path / "checkpoint.rfat").string());
    cam_config.set("index", "2");
    cam_config.set("out", dir.path.string());
    std::ostringstream cam_out;
    ASSERT_EQ(cmd::cmd_gradcam(cam_config, cam_out), 0);

    // exactly one PGM artifact, readable and in range
    bool found = false;
    for (const auto& entry : fs::directory_iterator(dir.path))
        if (entry.path().extension() == ".pgm") {
            found = true;
            const Tensor heat = read_pgm(entry.path().string());
            EXPECT_EQ(heat.h(), 16);
            for (double v : heat.data) {
                EXPECT_GE(v, 0.0);
                EXPECT_LE(v, 1.0);
            }
        }
    EXPECT_TRUE(found);

    cam_config.set("class", "7");
    std::ostringstream bad;
    EXPECT_THROW(cmd::cmd_gradcam(cam_config, bad), Error);
}

TEST(CommandTest, SeededRunsAreBitIdentical) {
    RunConfig config;
    config.set("seed", "6");
    config.set("train_count", "64");
    config.set("test_count", "32");
    config.set("epochs", "1");
    std::ostringstream a, b;
    ASSERT_EQ(cmd::cmd_train(config, a), 0);
    ASSERT_EQ(cmd::cmd_train(config, b), 0);
    EXPECT_EQ(a.str(), b.str());
}

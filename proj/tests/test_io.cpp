#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "ntklab/io.hpp"

using namespace ntklab;
namespace fs = std::filesystem;

TEST(Checkpoint, RoundTripIsBitExact) {
    for (auto mode : {InitMode::Standard, InitMode::Mirrored}) {
        NetworkConfig cfg;
        cfg.input_dim = 4;
        cfg.depth = 2;
        cfg.width = 16;
        cfg.init_mode = mode;
        cfg.seed = 1234567890123ULL;
        const NetworkParams p = init_params(cfg);
        const auto path = (fs::temp_directory_path() / "ntklab_ckpt.bin").string();
        save_checkpoint(path, p, 42);
        const CheckpointFile f = load_checkpoint(path);
        EXPECT_EQ(f.step, 42);
        EXPECT_EQ(f.params.config.seed, cfg.seed);
        EXPECT_EQ(f.params.config.init_mode, mode);
        EXPECT_TRUE(f.params.flatten() == p.flatten());
        EXPECT_EQ(f.header.at("parameter_count").get<long>(), cfg.parameter_count());
        EXPECT_EQ(fs::file_size(path), 16 + f.header.dump().size() + 8 * static_cast<std::size_t>(cfg.parameter_count()));
    }
}

TEST(Checkpoint, LittleEndianPayload) {
    NetworkConfig cfg;
    cfg.input_dim = 1;
    cfg.width = 1;
    cfg.with_first_layer_bias = false;
    NetworkParams p = NetworkParams::zeros(cfg);
    p.first.weights[0](0, 0) = 1.0;  // 0x3FF0000000000000
    const auto path = (fs::temp_directory_path() / "ntklab_le.bin").string();
    save_checkpoint(path, p, 0);
    std::ifstream is(path, std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    ASSERT_GE(bytes.size(), 16u);
    const std::size_t first = bytes.size() - 16;
    EXPECT_EQ(bytes[first + 6], 0xF0);
    EXPECT_EQ(bytes[first + 7], 0x3F);
    EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "NTKCKPT1");
}

TEST(Checkpoint, CorruptFilesRejected) {
    const auto path = (fs::temp_directory_path() / "ntklab_bad.bin").string();
    std::ofstream(path) << "not a checkpoint at all";
    EXPECT_THROW(load_checkpoint(path), ParseError);
    EXPECT_THROW(load_checkpoint("/nonexistent/ckpt"), ConfigError);
}

TEST(Csv, QuotesAndWidth) {
    std::ostringstream os;
    CsvWriter w(os, {"a", "b"});
    w.row({"1", "x,y"});
    EXPECT_EQ(os.str(), "a,b\n1,\"x,y\"\n");
    EXPECT_THROW(w.row({"1"}), DimensionError);
}

TEST(Format, DoublesRoundTrip) {
    for (double v : {0.1, 1.0 / 3.0, 1e-300, -2.5e17}) EXPECT_EQ(std::stod(format_double(v)), v);
}

TEST(Manifest, ContainsProvenance) {
    Manifest m;
    m.command = "curve";
    m.seeds = {1, 2};
    const Json j = m.to_json();
    EXPECT_EQ(j.at("tool"), "ntk-lab");
    EXPECT_FALSE(j.at("version").get<std::string>().empty());
    EXPECT_EQ(j.at("seeds").size(), 2u);
}

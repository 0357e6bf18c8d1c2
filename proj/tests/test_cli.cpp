#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mixlink/cli.hpp"

using namespace mixlink;
using namespace mixlink::cli;

TEST_CASE("config parsing: defaults, overrides, seed echo") {
    auto cfg = parse_config(R"({"seed": 42, "network": {"preset": "mixnet-100"}})");
    CHECK(cfg.seed == 42);
    REQUIRE(cfg.preset.has_value());
    CHECK(*cfg.preset == "mixnet-100");
    CHECK(cfg.verify.trials == 100);
    CHECK(cfg.gradcheck.tolerance == doctest::Approx(1e-4));
    CHECK(cfg.output.format == "table");
}

TEST_CASE("config parsing rejects unknown keys at every level") {
    CHECK_THROWS_AS(parse_config(R"({"sead": 1})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"network": {"presett": "x"}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"verify": {"trails": 5}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"train": {"dataset": {"classs": 4}}})"), ConfigError);
}

TEST_CASE("malformed JSON reports the line of the parse error") {
    try {
        parse_config("{\n  \"seed\": 1,\n  bad\n}");
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 3") != std::string::npos);
    }
}

TEST_CASE("explicit network: depth form and blocks form") {
    auto cfg = parse_config(R"({"network": {"explicit":
        {"L": 100, "k1": 12, "k2": 12, "position": "unfixed"}}})");
    auto spec = cfg.resolve_network();
    CHECK(spec.stem.out_channels == 24);
    CHECK(spec.blocks.size() == 3);
    CHECK(spec.blocks[0].layers == 16);
    CHECK(spec.theta == 1.0);      // documented default
    CHECK(spec.multiplier == 4);   // documented default

    auto cfg2 = parse_config(R"({"network": {"explicit":
        {"blocks": [2, 3], "k1": 2, "k2": 4, "position": "fixed", "input_size": 16}}})");
    auto spec2 = cfg2.resolve_network();
    CHECK(spec2.blocks.size() == 2);
    CHECK(spec2.blocks[1].layers == 3);
    CHECK(spec2.stem.out_channels == 8);
    CHECK(spec2.input_height == 16);

    CHECK_THROWS_AS(parse_config(R"({"network": {"explicit": {"L": 10, "blocks": [1]}}})"),
                    ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"network": {"explicit": {"L": 101}}})"), ConfigError);
    CHECK_THROWS_AS(parse_config(R"({"network": {"explicit": {"L": 100, "position": "x"}}})"),
                    ConfigError);
}

TEST_CASE("describe: preset table carries the 56/28/14/7 output sizes") {
    auto cfg = parse_config(R"({"network": {"preset": "mixnet-105"}})");
    std::ostringstream out, err;
    CHECK(cmd_describe(cfg, out, err) == kExitOk);
    const std::string text = out.str();
    CHECK(text.find("depth label 105") != std::string::npos);
    // Stage rows carry the block output sizes 56/28/14/7.
    CHECK(text.find("block1         6 layers, k1=32, k2=32, unfixed") != std::string::npos);
    CHECK(text.find("56x56") != std::string::npos);
    CHECK(text.find("28x28") != std::string::npos);
    CHECK(text.find("14x14") != std::string::npos);
    CHECK(text.find(" 7x7") != std::string::npos);
    // Detailed rows: the transitions consume the 56/28/14 maps and the
    // head consumes the 7x7 map at the final width 832.
    CHECK(text.find("(1,256,56,56)") != std::string::npos);
    CHECK(text.find("(1,512,28,28)") != std::string::npos);
    CHECK(text.find("(1,896,14,14)") != std::string::npos);
    CHECK(text.find("(1,832,7,7)") != std::string::npos);
}

TEST_CASE("describe without a network section is a usage error") {
    RunConfig cfg;
    std::ostringstream out, err;
    CHECK(cmd_describe(cfg, out, err) == kExitUsage);
    CHECK(err.str().find("network") != std::string::npos);
}

TEST_CASE("describe rejects an unknown preset, naming it") {
    auto cfg = parse_config(R"({"network": {"preset": "mixnet-7"}})");
    std::ostringstream out, err;
    CHECK(cmd_describe(cfg, out, err) == kExitUsage);
    CHECK(err.str().find("mixnet-7") != std::string::npos);
}

TEST_CASE("count-params compares presets against the paper totals") {
    auto cfg = parse_config(R"({"network": {"preset": "mixnet-141"}})");
    std::ostringstream out, err;
    CHECK(cmd_count_params(cfg, out, err) == kExitOk);
    CHECK(out.str().find("41.07") != std::string::npos);
    CHECK(out.str().find("pass") != std::string::npos);
}

TEST_CASE("count-params --grid emits the full sweep with a selected setting") {
    RunConfig cfg;
    cfg.count_params.grid = true;
    std::ostringstream out, err;
    CHECK(cmd_count_params(cfg, out, err) == kExitOk);
    const std::string text = out.str();
    CHECK(text.find("selected setting: m = 4, theta = 0.5") != std::string::npos);
    CHECK(text.find("all presets within tolerance") != std::string::npos);
}

TEST_CASE("count-params csv output is byte-stable across runs") {
    auto run = []() {
        auto cfg = parse_config(
            R"({"network": {"preset": "mixnet-100"}, "output": {"format": "csv"}})");
        std::ostringstream out, err;
        REQUIRE(cmd_count_params(cfg, out, err) == kExitOk);
        return out.str();
    };
    CHECK(run() == run());
}

TEST_CASE("verify-topology: default run passes all four suites") {
    auto cfg = parse_config(R"({"verify": {"trials": 5, "l_max": 4}})");
    std::ostringstream out, err;
    CHECK(cmd_verify_topology(cfg, out, err) == kExitOk);
    const std::string text = out.str();
    CHECK(text.find("[PASS] unrolling") != std::string::npos);
    CHECK(text.find("[PASS] reduction") != std::string::npos);
    CHECK(text.find("[PASS] width-law") != std::string::npos);
    CHECK(text.find("[PASS] fixed-unfixed-witness") != std::string::npos);
}

TEST_CASE("verify-topology: suite selection") {
    auto cfg = parse_config(R"({"verify": {"trials": 5, "suite": "reduction", "arch": 2}})");
    std::ostringstream out, err;
    CHECK(cmd_verify_topology(cfg, out, err) == kExitOk);
    CHECK(out.str().find("reduction") != std::string::npos);
    CHECK(out.str().find("unrolling") == std::string::npos);

    auto bad = parse_config(R"({"verify": {"suite": "nope"}})");
    CHECK(cmd_verify_topology(bad, out, err) == kExitUsage);
}

TEST_CASE("gradcheck: single-op selection and dtype contract") {
    auto cfg = parse_config(R"({"gradcheck": {"op": "relu", "trials": 3}})");
    std::ostringstream out, err;
    CHECK(cmd_gradcheck(cfg, out, err) == kExitOk);
    CHECK(out.str().find("[PASS] relu") != std::string::npos);

    auto cfg32 = parse_config(R"({"gradcheck": {"op": "linear", "trials": 3, "dtype": "32bit"}})");
    std::ostringstream out32;
    CHECK(cmd_gradcheck(cfg32, out32, err) == kExitOk);
    CHECK(out32.str().find("0.01") != std::string::npos); // looser documented tolerance

    auto bad = parse_config(R"({"gradcheck": {"op": "transmogrify"}})");
    CHECK(cmd_gradcheck(bad, out, err) == kExitUsage);
}

TEST_CASE("train-toy: short run writes a deterministic history and beats nothing yet") {
    auto run = [](const char* path) {
        auto cfg = parse_config(std::string(R"({"seed": 5, "train": {"epochs": 2,
            "batch_size": 32, "lr": 0.05,
            "dataset": {"classes": 3, "per_class": 8, "per_class_test": 4, "size": 8}},
            "output": {"path": ")") + path + "\"}}");
        std::ostringstream out, err;
        REQUIRE(cmd_train_toy(cfg, out, err) == kExitOk);
        std::ifstream in(path);
        std::ostringstream content;
        content << in.rdbuf();
        return content.str();
    };
    const auto a = run("toy_a.csv");
    const auto b = run("toy_b.csv");
    CHECK(a == b); // same seed -> identical CSV bytes
    CHECK(a.find("epoch,lr,loss,train_acc,test_acc") == 0);
    std::remove("toy_a.csv");
    std::remove("toy_b.csv");
}

TEST_CASE("train-toy --ablate position emits paired curves") {
    auto cfg = parse_config(R"({"seed": 1, "train": {"epochs": 2, "batch_size": 32,
        "lr": 0.05, "ablate": "position",
        "dataset": {"classes": 3, "per_class": 8, "per_class_test": 4, "size": 8}},
        "output": {"path": "ablate_pos.csv"}})");
    std::ostringstream out, err;
    CHECK(cmd_train_toy(cfg, out, err) == kExitOk);
    std::ifstream in("ablate_pos.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header ==
          "epoch,lr,fixed_loss,fixed_train_acc,fixed_test_acc,unfixed_loss,unfixed_train_acc,"
          "unfixed_test_acc");
    std::remove("ablate_pos.csv");
}

TEST_CASE("train-toy --ablate k2 sweeps the outer link size") {
    auto cfg = parse_config(R"({"seed": 1, "train": {"epochs": 1, "batch_size": 32,
        "lr": 0.05, "ablate": "k2", "k2_values": [2, 4],
        "dataset": {"classes": 3, "per_class": 8, "per_class_test": 4, "size": 8}},
        "output": {"path": "ablate_k2.csv"}})");
    std::ostringstream out, err;
    CHECK(cmd_train_toy(cfg, out, err) == kExitOk);
    std::ifstream in("ablate_k2.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "k2,epoch,lr,loss,train_acc,test_acc");
    int rows = 0;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 2); // one epoch per k2 value
    std::remove("ablate_k2.csv");
}

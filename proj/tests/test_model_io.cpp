#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "ctxlens/model_io.hpp"
#include "support.hpp"

using namespace ctxlens;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
    const fs::path dir = fs::path("test_tmp") / "model_io";
    fs::create_directories(dir);
    return dir;
}

bool weights_equal(const ModelWeights& a, const ModelWeights& b) {
    if (!(a.token_embedding == b.token_embedding)) return false;
    if (!(a.position_embedding == b.position_embedding)) return false;
    if (a.layers.size() != b.layers.size()) return false;
    for (size_t l = 0; l < a.layers.size(); ++l) {
        const auto& x = a.layers[l];
        const auto& y = b.layers[l];
        if (x.attn_ln_gain != y.attn_ln_gain || x.attn_ln_bias != y.attn_ln_bias) return false;
        if (x.w_query != y.w_query || x.w_key != y.w_key || x.w_value != y.w_value) return false;
        if (!(x.attn_out_proj == y.attn_out_proj) || x.attn_out_bias != y.attn_out_bias) return false;
        if (x.mlp_ln_gain != y.mlp_ln_gain || x.mlp_ln_bias != y.mlp_ln_bias) return false;
        if (!(x.mlp_in == y.mlp_in) || x.mlp_in_bias != y.mlp_in_bias) return false;
        if (!(x.mlp_out == y.mlp_out) || x.mlp_out_bias != y.mlp_out_bias) return false;
    }
    return a.final_ln_gain == b.final_ln_gain && a.final_ln_bias == b.final_ln_bias &&
           a.unembedding == b.unembedding;
}

} // namespace

TEST_CASE("binary model file round trips bit-exactly") {
    SeededRng rng(21);
    const ModelWeights w = random_model_weights(testsup::tiny_config(2, 2, 4, 12, 32, 16), rng);
    const auto path = (tmp_dir() / "roundtrip.ctxm").string();
    save_model_binary(w, path);
    const ModelWeights loaded = load_model(path);
    CHECK(loaded.config.num_layers == 2);
    CHECK(loaded.config.stop_id == w.config.stop_id);
    CHECK(loaded.config.layernorm_epsilon == w.config.layernorm_epsilon);
    CHECK(weights_equal(w, loaded));
}

TEST_CASE("text manifest round trips bit-exactly") {
    SeededRng rng(22);
    const ModelWeights w = random_model_weights(testsup::tiny_config(1, 2, 3, 8, 20, 12), rng);
    const auto path = (tmp_dir() / "roundtrip.txt").string();
    save_model_text(w, path);
    const ModelWeights loaded = load_model(path);
    CHECK(weights_equal(w, loaded));
}

TEST_CASE("loader rejects malformed files") {
    const auto dir = tmp_dir();

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_model((dir / "does_not_exist.ctxm").string()), InputError);
    }
    SUBCASE("truncated binary") {
        SeededRng rng(23);
        const ModelWeights w = random_model_weights(testsup::tiny_config(1, 1, 4, 8, 16, 8), rng);
        const auto path = (dir / "trunc.ctxm").string();
        save_model_binary(w, path);
        const auto size = fs::file_size(path);
        fs::resize_file(path, size / 2);
        CHECK_THROWS_AS(load_model(path), InputError);
    }
    SUBCASE("missing config field") {
        const auto path = (dir / "nofield.txt").string();
        std::ofstream(path) << "ctxlens-model v1\nfield num_layers 1\n";
        CHECK_THROWS_AS(load_model(path), InputError);
    }
    SUBCASE("bad tensor shape") {
        SeededRng rng(24);
        const ModelWeights w = random_model_weights(testsup::tiny_config(1, 1, 2, 4, 8, 4), rng);
        const auto good = (dir / "good.txt").string();
        save_model_text(w, good);
        std::ifstream in(good);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        const auto pos = content.find("tensor token_embedding 2 8 2");
        REQUIRE(pos != std::string::npos);
        content.replace(pos, 28, "tensor token_embedding 2 8 3");
        const auto bad = (dir / "bad.txt").string();
        std::ofstream(bad) << content;
        CHECK_THROWS_AS(load_model(bad), InputError);
    }
    SUBCASE("garbage header") {
        const auto path = (dir / "garbage.bin").string();
        std::ofstream(path, std::ios::binary) << "NOTAMODELFILE AT ALL";
        CHECK_THROWS_AS(load_model(path), InputError);
    }
}

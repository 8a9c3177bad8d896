// Writes a procedural face-like corpus for desk-scale runs.
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "cipher/dataio/toy_faces.hpp"

int main(int argc, char** argv) {
    CLI::App app{"make_toy_faces: procedural stand-in for a real face corpus"};
    std::string out;
    int n = 1000;
    int size = 64;
    std::uint64_t seed = 42;
    app.add_option("out", out, "output directory")->required();
    app.add_option("-n,--count", n, "number of images")->check(CLI::PositiveNumber);
    app.add_option("-s,--size", size, "side length in pixels")->check(CLI::Range(4, 1024));
    app.add_option("--seed", seed, "rng seed");
    CLI11_PARSE(app, argc, argv);
    try {
        cipher::dataio::write_toy_faces(out, n, size, seed);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    spdlog::info("wrote {} faces ({}x{}) to {}", n, size, size, out);
    return 0;
}

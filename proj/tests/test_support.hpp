#pragma once

// Shared fixtures for the test suites.

#include <filesystem>
#include <string>

#include "promptcl/promptcl.hpp"

namespace testsup {

inline promptcl::ToyBundleConfig small_bundle_config(uint64_t seed = 7) {
    promptcl::ToyBundleConfig cfg;
    cfg.language = {2, 16, 2, 48, promptcl::Modality::language};
    cfg.vision = {2, 24, 2, 48, promptcl::Modality::vision};
    cfg.d_joint = 8;
    cfg.patch = {8, 4};
    cfg.seed = seed;
    return cfg;
}

inline promptcl::DualEncoderBundle small_frozen_bundle(uint64_t seed = 7) {
    auto bundle = promptcl::build_toy_bundle(small_bundle_config(seed));
    bundle.freeze();
    return bundle;
}

inline promptcl::Mat random_image(int size, promptcl::Rng& rng) {
    return promptcl::gaussian(size, size, 0.5, rng);
}

inline std::filesystem::path temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("promptcl_test_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace testsup

#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>

namespace wmsteer_test {

// Scratch directory removed on destruction; unique per process and instance.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("wmsteer_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace wmsteer_test

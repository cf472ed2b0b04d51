#pragma once

#include <gtest/gtest.h>

#include <functional>

#include "spose/error.hpp"

/// Asserts that `f` throws spose::Error with the given code.
inline void expect_code(spose::ErrorCode code, const std::function<void()>& f) {
  try {
    f();
    ADD_FAILURE() << "expected " << spose::to_string(code);
  } catch (const spose::Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

#include <filesystem>
#include <string>

#include <unistd.h>

/// Fresh scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() /
              ("spose_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

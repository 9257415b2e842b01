#pragma once

#include <filesystem>
#include <optional>
#include <string>

namespace em {

namespace fs = std::filesystem;

void ensure_dir(const fs::path& dir);

std::optional<std::string> read_file(const fs::path& path);

// tmp-file + rename so readers only ever observe complete content
void atomic_write(const fs::path& path, const std::string& content);

void append_line(const fs::path& path, const std::string& line);

// Advisory lock covering both other OS processes (flock) and threads within
// this process that open their own FileLock on the same path.
class FileLock {
  public:
    explicit FileLock(const fs::path& path, bool exclusive = true);
    ~FileLock();
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

  private:
    int fd_ = -1;
};

}  // namespace em

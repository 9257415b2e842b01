#include "em/fsutil.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

#include "em/common.hpp"

namespace em {

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec && !fs::is_directory(dir)) {
        throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
    }
}

std::optional<std::string> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void atomic_write(const fs::path& path, const std::string& content) {
    ensure_dir(path.parent_path());
    fs::path tmp = path;
    tmp += "." + random_id("tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for write");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw std::runtime_error("rename to " + path.string() + " failed: " + ec.message());
    }
}

void append_line(const fs::path& path, const std::string& line) {
    ensure_dir(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::app);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for append");
    out << line << '\n';
    out.flush();
    if (!out) throw std::runtime_error("append failed for " + path.string());
}

// Each FileLock opens its own descriptor, so flock excludes both other
// processes and other threads of this process.
FileLock::FileLock(const fs::path& path, bool exclusive) {
    ensure_dir(path.parent_path());
    fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (fd_ < 0) {
        throw std::runtime_error("cannot open lock file " + path.string() + ": " +
                                 std::strerror(errno));
    }
    int rc;
    do {
        rc = ::flock(fd_, exclusive ? LOCK_EX : LOCK_SH);
    } while (rc < 0 && errno == EINTR);
    if (rc < 0) {
        int e = errno;
        ::close(fd_);
        fd_ = -1;
        throw std::runtime_error("flock failed for " + path.string() + ": " + std::strerror(e));
    }
}

FileLock::~FileLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

}  // namespace em

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace lsens {

// All recoverable failures surface as lsens::Error; callers that need exit
// codes map Error to 2 (bad input) or 1 (runtime) at the CLI boundary.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Failure to produce an output file; the CLI reports these as runtime
// failures rather than rejected input.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

// Write-then-rename within the target directory, so readers never observe a
// partial file. A crash leaves either the old content or the new one.
inline void write_text_atomic(const std::string& path, const std::string& text) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp);
        out << text;
        out.flush();
        if (!out) throw IoError("short write to " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot replace " + path + ": " + ec.message());
}

// Training churns through ~0.5 GB of short-lived tensor allocations per step;
// with default glibc thresholds every large free returns pages to the kernel
// and the next step page-faults them back in. Keeping large blocks on the
// heap roughly halves step time. Call once from main().
inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace lsens

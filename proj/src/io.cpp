#include "rmab/io.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "rmab/errors.hpp"

namespace rmab {

void write_file_atomic(const std::filesystem::path& path, std::string_view contents,
                       bool overwrite) {
    namespace fs = std::filesystem;
    if (!overwrite && fs::exists(path))
        throw InputError(fmt::format("{} exists; pass --overwrite to replace it", path.string()));
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw InputError(fmt::format("cannot open {} for writing", tmp.string()));
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out)
            throw InputError(fmt::format("write to {} failed", tmp.string()));
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp);
        throw InputError(fmt::format("cannot move {} into place: {}", path.string(), ec.message()));
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw InputError(fmt::format("cannot read {}", path.string()));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) { return fmt::format("{:016x}", value); }

} // namespace rmab

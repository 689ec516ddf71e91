#ifndef GFFPERC_DIGEST_HPP
#define GFFPERC_DIGEST_HPP

#include <filesystem>
#include <string>
#include <string_view>

namespace gffperc {

// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& p);

}  // namespace gffperc

#endif

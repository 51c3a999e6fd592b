#include "stylecqa/digest.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <openssl/evp.h>

#include "stylecqa/error.hpp"

namespace stylecqa {

std::string_view errc_name(Errc code) noexcept {
    switch (code) {
        case Errc::EmptyInput: return "EmptyInput";
        case Errc::RegistryMismatch: return "RegistryMismatch";
        case Errc::UnparsableLabel: return "UnparsableLabel";
        case Errc::UnknownCluster: return "UnknownCluster";
        case Errc::SchemaVersionMismatch: return "SchemaVersionMismatch";
        case Errc::CorruptDocument: return "CorruptDocument";
        case Errc::BackendError: return "BackendError";
        case Errc::Timeout: return "Timeout";
        case Errc::UnknownAdapter: return "UnknownAdapter";
        case Errc::RateLimited: return "RateLimited";
        case Errc::MalformedResponse: return "MalformedResponse";
        case Errc::UnknownAccount: return "UnknownAccount";
        case Errc::EmptyArticle: return "EmptyArticle";
        case Errc::MalformedGeneration: return "MalformedGeneration";
        case Errc::EmptyExemplarPool: return "EmptyExemplarPool";
        case Errc::UnparsableJudgment: return "UnparsableJudgment";
        case Errc::UnscoredInstance: return "UnscoredInstance";
        case Errc::NoTree: return "NoTree";
        case Errc::EmptyChosenSet: return "EmptyChosenSet";
        case Errc::EmptyPairs: return "EmptyPairs";
        case Errc::DigestMismatch: return "DigestMismatch";
        case Errc::MissingSystem: return "MissingSystem";
        case Errc::EmptyRecords: return "EmptyRecords";
        case Errc::ConfigError: return "ConfigError";
        case Errc::StageInputMissing: return "StageInputMissing";
        case Errc::IoError: return "IoError";
    }
    return "Unknown";
}

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error(Errc::IoError, "sha256 failed");
    }
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out += fmt::format("{:02x}", md[i]);
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) {
    return sha256_hex(read_file(path));
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::IoError, fmt::format("cannot open {}", path.string()));
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(Errc::IoError, fmt::format("cannot write {}", tmp.string()));
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) {
            throw Error(Errc::IoError, fmt::format("short write to {}", tmp.string()));
        }
    }
    std::filesystem::rename(tmp, path);
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::StageInputMissing, fmt::format("cannot open {}", path.string()));
    }
    std::vector<json> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw Error(Errc::CorruptDocument,
                        fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
        }
    }
    return rows;
}

std::string to_jsonl(const std::vector<json>& rows) {
    std::string out;
    for (const auto& row : rows) {
        out += row.dump();
        out += '\n';
    }
    return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
    write_file_atomic(path, to_jsonl(rows));
}

}  // namespace stylecqa

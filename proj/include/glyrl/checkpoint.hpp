#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "glyrl/nn.hpp"

// Single-file binary container used for both policy checkpoints and
// transition datasets: an 8-byte magic, a JSON manifest, then named tensor
// records. Every record and the manifest carry a CRC32 so corruption is
// detected on load and reported by record name. Writes go to a temp file in
// the same directory and are renamed into place, so a crash mid-save never
// leaves a truncated artifact behind.

namespace glyrl::ckpt {

inline constexpr char kPolicyMagic[9] = "GLYCKPT1";
inline constexpr char kDatasetMagic[9] = "GLYDSET1";

enum class DType : uint8_t { f32 = 0, f64 = 1, u8 = 2, u32 = 3, u64 = 4 };

size_t dtype_size(DType d);
const char* dtype_name(DType d);

uint32_t crc32(const void* data, size_t n, uint32_t seed = 0);

struct Record {
    std::string name;
    DType dtype = DType::f32;
    std::vector<uint64_t> dims;
    std::vector<unsigned char> bytes;

    uint64_t elem_count() const;
};

class Writer {
public:
    explicit Writer(const char* magic8);

    void add(const std::string& name, DType dtype, std::vector<uint64_t> dims,
             const void* data, size_t nbytes);
    void add_f32(const std::string& name, std::vector<uint64_t> dims, const float* data);
    void add_f64(const std::string& name, std::vector<uint64_t> dims, const double* data);
    void add_u8(const std::string& name, std::vector<uint64_t> dims, const uint8_t* data);
    void add_u32(const std::string& name, std::vector<uint64_t> dims, const uint32_t* data);
    void add_u64(const std::string& name, std::vector<uint64_t> dims, const uint64_t* data);

    void set_manifest(nlohmann::json m) { manifest_ = std::move(m); }

    // FNV-1a over record names and payloads, independent of manifest content.
    uint64_t content_hash() const;

    void save(const std::string& path) const;

private:
    std::string magic_;
    nlohmann::json manifest_;
    std::vector<Record> records_;
};

class Reader {
public:
    static Reader load(const std::string& path, const char* expected_magic);

    const nlohmann::json& manifest() const { return manifest_; }
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    const Record& get(const std::string& name) const;

    std::vector<float> f32(const std::string& name) const;
    std::vector<double> f64(const std::string& name) const;
    std::vector<uint8_t> u8(const std::string& name) const;
    std::vector<uint32_t> u32(const std::string& name) const;
    std::vector<uint64_t> u64(const std::string& name) const;

    std::vector<std::string> names() const;
    uint64_t content_hash() const;

private:
    nlohmann::json manifest_;
    std::vector<Record> records_;
    std::map<std::string, size_t> index_;
};

// MLP (de)serialization: per layer "<prefix>/W<l>" and "<prefix>/b<l>", plus
// "<prefix>/sizes" and "<prefix>/out_act".
void append_mlp(Writer& w, const std::string& prefix, const nn::Mlp<float>& net);
nn::Mlp<float> read_mlp(const Reader& r, const std::string& prefix);

}  // namespace glyrl::ckpt

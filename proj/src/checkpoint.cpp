#include "glyrl/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <unistd.h>
#include <stdexcept>

#include "glyrl/common.hpp"

namespace glyrl::ckpt {

namespace {

constexpr uint32_t kFormatVersion = 1;

uint32_t crc_table_entry(uint32_t i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    return c;
}

struct CrcTable {
    uint32_t t[256];
    CrcTable() {
        for (uint32_t i = 0; i < 256; ++i) t[i] = crc_table_entry(i);
    }
};

template <typename T>
void put(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(const std::string& buf, size_t& off, const std::string& what) {
    if (off + sizeof(T) > buf.size()) throw std::runtime_error("truncated file while reading " + what);
    T v;
    std::memcpy(&v, buf.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

uint32_t crc32(const void* data, size_t n, uint32_t seed) {
    static const CrcTable table;
    uint32_t c = seed ^ 0xffffffffu;
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) c = table.t[(c ^ p[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

size_t dtype_size(DType d) {
    switch (d) {
        case DType::f32: return 4;
        case DType::f64: return 8;
        case DType::u8: return 1;
        case DType::u32: return 4;
        case DType::u64: return 8;
    }
    throw std::invalid_argument("bad dtype");
}

const char* dtype_name(DType d) {
    switch (d) {
        case DType::f32: return "f32";
        case DType::f64: return "f64";
        case DType::u8: return "u8";
        case DType::u32: return "u32";
        case DType::u64: return "u64";
    }
    return "?";
}

uint64_t Record::elem_count() const {
    uint64_t n = 1;
    for (uint64_t d : dims) n *= d;
    return n;
}

Writer::Writer(const char* magic8) : magic_(magic8) {
    if (magic_.size() != 8) throw std::invalid_argument("magic must be 8 bytes");
    manifest_ = nlohmann::json::object();
}

void Writer::add(const std::string& name, DType dtype, std::vector<uint64_t> dims,
                 const void* data, size_t nbytes) {
    Record r;
    r.name = name;
    r.dtype = dtype;
    r.dims = std::move(dims);
    const uint64_t expect = r.elem_count() * dtype_size(dtype);
    if (expect != nbytes) {
        throw std::invalid_argument("record " + name + ": dims imply " + std::to_string(expect) +
                                    " bytes, got " + std::to_string(nbytes));
    }
    r.bytes.assign(static_cast<const unsigned char*>(data),
                   static_cast<const unsigned char*>(data) + nbytes);
    for (const auto& existing : records_) {
        if (existing.name == name) throw std::invalid_argument("duplicate record name " + name);
    }
    records_.push_back(std::move(r));
}

void Writer::add_f32(const std::string& name, std::vector<uint64_t> dims, const float* data) {
    Record probe;
    probe.dims = dims;
    add(name, DType::f32, std::move(dims), data, probe.elem_count() * 4);
}
void Writer::add_f64(const std::string& name, std::vector<uint64_t> dims, const double* data) {
    Record probe;
    probe.dims = dims;
    add(name, DType::f64, std::move(dims), data, probe.elem_count() * 8);
}
void Writer::add_u8(const std::string& name, std::vector<uint64_t> dims, const uint8_t* data) {
    Record probe;
    probe.dims = dims;
    add(name, DType::u8, std::move(dims), data, probe.elem_count());
}
void Writer::add_u32(const std::string& name, std::vector<uint64_t> dims, const uint32_t* data) {
    Record probe;
    probe.dims = dims;
    add(name, DType::u32, std::move(dims), data, probe.elem_count() * 4);
}
void Writer::add_u64(const std::string& name, std::vector<uint64_t> dims, const uint64_t* data) {
    Record probe;
    probe.dims = dims;
    add(name, DType::u64, std::move(dims), data, probe.elem_count() * 8);
}

uint64_t Writer::content_hash() const {
    uint64_t h = fnv1a64(nullptr, 0);
    for (const auto& r : records_) {
        h = fnv1a64(r.name.data(), r.name.size(), h);
        h = fnv1a64(r.bytes.data(), r.bytes.size(), h);
    }
    return h;
}

void Writer::save(const std::string& path) const {
    std::string buf;
    buf.append(magic_);
    put<uint32_t>(buf, kFormatVersion);

    const std::string mtxt = manifest_.dump();
    put<uint64_t>(buf, mtxt.size());
    buf.append(mtxt);
    put<uint32_t>(buf, crc32(mtxt.data(), mtxt.size()));

    put<uint32_t>(buf, static_cast<uint32_t>(records_.size()));
    for (const auto& r : records_) {
        put<uint32_t>(buf, static_cast<uint32_t>(r.name.size()));
        buf.append(r.name);
        put<uint8_t>(buf, static_cast<uint8_t>(r.dtype));
        put<uint32_t>(buf, static_cast<uint32_t>(r.dims.size()));
        for (uint64_t d : r.dims) put<uint64_t>(buf, d);
        put<uint64_t>(buf, r.bytes.size());
        buf.append(reinterpret_cast<const char*>(r.bytes.data()), r.bytes.size());
        put<uint32_t>(buf, crc32(r.bytes.data(), r.bytes.size()));
    }

    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        f.flush();
        if (!f) throw std::runtime_error("short write to " + tmp.string());
    }
    fs::rename(tmp, target);
}

Reader Reader::load(const std::string& path, const char* expected_magic) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r;
    size_t off = 0;
    if (buf.size() < 8 || buf.compare(0, 8, expected_magic) != 0) {
        throw std::runtime_error(path + ": bad magic (expected " + std::string(expected_magic) + ")");
    }
    off = 8;
    const auto version = take<uint32_t>(buf, off, "version");
    if (version != kFormatVersion) {
        throw std::runtime_error(path + ": unsupported format version " + std::to_string(version));
    }

    const auto mlen = take<uint64_t>(buf, off, "manifest length");
    if (off + mlen > buf.size()) throw std::runtime_error(path + ": truncated manifest");
    const std::string mtxt = buf.substr(off, mlen);
    off += mlen;
    const auto mcrc = take<uint32_t>(buf, off, "manifest crc");
    if (crc32(mtxt.data(), mtxt.size()) != mcrc) throw std::runtime_error(path + ": manifest crc mismatch");
    r.manifest_ = nlohmann::json::parse(mtxt);

    const auto count = take<uint32_t>(buf, off, "record count");
    for (uint32_t i = 0; i < count; ++i) {
        Record rec;
        const auto nlen = take<uint32_t>(buf, off, "record name length");
        if (off + nlen > buf.size()) throw std::runtime_error(path + ": truncated record name");
        rec.name = buf.substr(off, nlen);
        off += nlen;
        const auto dt = take<uint8_t>(buf, off, rec.name + " dtype");
        if (dt > static_cast<uint8_t>(DType::u64)) {
            throw std::runtime_error(path + ": record " + rec.name + " has invalid dtype");
        }
        rec.dtype = static_cast<DType>(dt);
        const auto ndim = take<uint32_t>(buf, off, rec.name + " ndim");
        rec.dims.resize(ndim);
        for (auto& d : rec.dims) d = take<uint64_t>(buf, off, rec.name + " dims");
        const auto plen = take<uint64_t>(buf, off, rec.name + " payload length");
        if (plen != rec.elem_count() * dtype_size(rec.dtype)) {
            throw std::runtime_error(path + ": record " + rec.name + " payload/dims mismatch");
        }
        if (off + plen > buf.size()) throw std::runtime_error(path + ": truncated record " + rec.name);
        rec.bytes.assign(buf.begin() + off, buf.begin() + off + plen);
        off += plen;
        const auto rcrc = take<uint32_t>(buf, off, rec.name + " crc");
        if (crc32(rec.bytes.data(), rec.bytes.size()) != rcrc) {
            throw std::runtime_error(path + ": record " + rec.name + " is corrupt (crc mismatch)");
        }
        r.index_[rec.name] = r.records_.size();
        r.records_.push_back(std::move(rec));
    }
    return r;
}

const Record& Reader::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("missing record " + name);
    return records_[it->second];
}

namespace {

template <typename T>
std::vector<T> typed(const Record& rec, DType want) {
    if (rec.dtype != want) {
        throw std::runtime_error("record " + rec.name + " is " + dtype_name(rec.dtype) +
                                 ", expected " + dtype_name(want));
    }
    std::vector<T> v(rec.elem_count());
    std::memcpy(v.data(), rec.bytes.data(), rec.bytes.size());
    return v;
}

}  // namespace

std::vector<float> Reader::f32(const std::string& n) const { return typed<float>(get(n), DType::f32); }
std::vector<double> Reader::f64(const std::string& n) const { return typed<double>(get(n), DType::f64); }
std::vector<uint8_t> Reader::u8(const std::string& n) const { return typed<uint8_t>(get(n), DType::u8); }
std::vector<uint32_t> Reader::u32(const std::string& n) const { return typed<uint32_t>(get(n), DType::u32); }
std::vector<uint64_t> Reader::u64(const std::string& n) const { return typed<uint64_t>(get(n), DType::u64); }

std::vector<std::string> Reader::names() const {
    std::vector<std::string> out;
    for (const auto& r : records_) out.push_back(r.name);
    return out;
}

uint64_t Reader::content_hash() const {
    uint64_t h = fnv1a64(nullptr, 0);
    for (const auto& r : records_) {
        h = fnv1a64(r.name.data(), r.name.size(), h);
        h = fnv1a64(r.bytes.data(), r.bytes.size(), h);
    }
    return h;
}

void append_mlp(Writer& w, const std::string& prefix, const nn::Mlp<float>& net) {
    std::vector<uint64_t> sizes(net.sizes.begin(), net.sizes.end());
    w.add_u64(prefix + "/sizes", {sizes.size()}, sizes.data());
    const uint32_t out = static_cast<uint32_t>(net.out);
    w.add_u32(prefix + "/out_act", {1}, &out);
    for (size_t l = 0; l < net.layers(); ++l) {
        w.add_f32(prefix + "/W" + std::to_string(l), {net.W[l].rows, net.W[l].cols}, net.W[l].data());
        w.add_f32(prefix + "/b" + std::to_string(l), {net.b[l].size()}, net.b[l].data());
    }
}

nn::Mlp<float> read_mlp(const Reader& r, const std::string& prefix) {
    nn::Mlp<float> net;
    const auto sizes = r.u64(prefix + "/sizes");
    net.sizes.assign(sizes.begin(), sizes.end());
    const auto out = r.u32(prefix + "/out_act");
    if (out.size() != 1 || out[0] > 2) throw std::runtime_error(prefix + ": bad out_act");
    net.out = static_cast<nn::OutAct>(out[0]);
    for (size_t l = 0; l + 1 < net.sizes.size(); ++l) {
        const auto& wrec = r.get(prefix + "/W" + std::to_string(l));
        if (wrec.dims.size() != 2 || wrec.dims[0] != net.sizes[l + 1] || wrec.dims[1] != net.sizes[l]) {
            throw std::runtime_error(prefix + ": layer " + std::to_string(l) + " shape mismatch");
        }
        nn::Mat<float> w(wrec.dims[0], wrec.dims[1]);
        w.a = r.f32(wrec.name);
        net.W.push_back(std::move(w));
        net.b.push_back(r.f32(prefix + "/b" + std::to_string(l)));
        if (net.b.back().size() != net.sizes[l + 1]) {
            throw std::runtime_error(prefix + ": layer " + std::to_string(l) + " bias shape mismatch");
        }
    }
    return net;
}

}  // namespace glyrl::ckpt

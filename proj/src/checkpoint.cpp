// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "hide_forge/errors.hpp"

namespace hide_forge {

namespace {

constexpr char kMagic[8] = {'H', 'I', 'D', 'E', 'F', 'R', 'G', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put_raw(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

void put_string(std::string& out, const std::string& s) {
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

class Reader {
 public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename T>
    T raw() {
        need(sizeof(T));
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }

    std::string string() {
        const auto n = raw<std::uint32_t>();
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    void doubles(double* dst, std::size_t count) {
        if (count > (bytes_.size() - pos_) / sizeof(double)) {
            throw IngestionError("checkpoint: truncated tensor data");
        }
        std::memcpy(dst, bytes_.data() + pos_, count * sizeof(double));
        pos_ += count * sizeof(double);
    }

    bool at_end() const { return pos_ == bytes_.size(); }

 private:
    void need(std::size_t n) const {
        if (n > bytes_.size() - pos_) {
            throw IngestionError("checkpoint: truncated at byte " + std::to_string(pos_));
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

const std::string& TensorContainer::meta(const std::string& key) const {
    const auto it = metadata_.find(key);
    if (it == metadata_.end()) {
        throw IngestionError("checkpoint: missing metadata key '" + key + "'");
    }
    return it->second;
}

void TensorContainer::put(std::string name, Matrix tensor) {
    if (contains(name)) {
        throw ContractError("checkpoint: duplicate tensor '" + name + "'");
    }
    tensors_.emplace_back(std::move(name), std::move(tensor));
}

bool TensorContainer::contains(const std::string& name) const {
    return std::any_of(tensors_.begin(), tensors_.end(), [&](const auto& t) { return t.first == name; });
}

const Matrix& TensorContainer::get(const std::string& name) const {
    for (const auto& [n, m] : tensors_) {
        if (n == name) {
            return m;
        }
    }
    throw IngestionError("checkpoint: missing tensor '" + name + "'");
}

std::string TensorContainer::serialize() const {
    std::string out(kMagic, sizeof(kMagic));
    put_raw<std::uint32_t>(out, kCheckpointVersion);
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(metadata_.size()));
    for (const auto& [k, v] : metadata_) {
        put_string(out, k);
        put_string(out, v);
    }
    put_raw<std::uint32_t>(out, static_cast<std::uint32_t>(tensors_.size()));
    for (const auto& [name, m] : tensors_) {
        put_string(out, name);
        put_raw<std::uint64_t>(out, m.rows());
        put_raw<std::uint64_t>(out, m.cols());
        out.append(reinterpret_cast<const char*>(m.data()), m.size() * sizeof(double));
    }
    return out;
}

TensorContainer TensorContainer::deserialize(const std::string& bytes) {
    if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw IngestionError("checkpoint: bad magic");
    }
    Reader in(bytes);
    for (std::size_t i = 0; i < sizeof(kMagic); ++i) {
        in.raw<char>();
    }
    const auto version = in.raw<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw IngestionError(fmt::format("checkpoint: unsupported version {}", version));
    }
    TensorContainer c;
    const auto n_meta = in.raw<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        std::string key = in.string();
        c.metadata_[key] = in.string();
    }
    const auto n_tensors = in.raw<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        std::string name = in.string();
        const auto rows = in.raw<std::uint64_t>();
        const auto cols = in.raw<std::uint64_t>();
        if (cols != 0 && rows > bytes.size() / cols) {
            throw IngestionError("checkpoint: implausible shape for tensor '" + name + "'");
        }
        Matrix m(rows, cols);
        in.doubles(m.data(), m.size());
        c.put(std::move(name), std::move(m));
    }
    if (!in.at_end()) {
        throw IngestionError("checkpoint: trailing bytes");
    }
    return c;
}

void TensorContainer::write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IngestionError("checkpoint: cannot write " + path.string());
    }
}

TensorContainer TensorContainer::read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IngestionError("checkpoint: cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

}  // namespace hide_forge

/*
 Copyright 2026 maskkit contributors
 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      http://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/
#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "maskkit/model.hpp"

namespace maskkit {

inline constexpr char kCheckpointMagic[8] = {'M', 'K', 'T', 'O', 'Y', '0', '0', '1'};

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(buf, 8);
}

inline std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

} // namespace detail

/// Binary checkpoint: magic, JSON header (config + seed), then every named
/// tensor with its shape and raw doubles. Frozen backbone weights are stored
/// too, so a checkpoint stands alone.
inline void save_checkpoint(const std::string& path, const ToyModel& model) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out.write(kCheckpointMagic, 8);

    nlohmann::ordered_json header;
    nlohmann::ordered_json jc;
    to_json(jc, model.config());
    header["config"] = std::move(jc);
    header["seed"] = model.seed();
    const std::string hs = header.dump();
    detail::write_u64(out, hs.size());
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

    const auto& tensors = model.tensors();
    detail::write_u64(out, tensors.size());
    for (const auto& [name, t] : tensors) {
        detail::write_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u64(out, static_cast<std::uint64_t>(t.rank()));
        for (int i = 0; i < t.rank(); ++i) detail::write_u64(out, static_cast<std::uint64_t>(t.dim(i)));
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline ToyModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);

    const std::uint64_t hlen = detail::read_u64(in);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw std::runtime_error("load_checkpoint: truncated header in " + path);
    const nlohmann::ordered_json header = nlohmann::ordered_json::parse(hs);
    ToyModelConfig cfg;
    from_json(header.at("config"), cfg);
    ToyModel model(cfg, header.at("seed").get<std::uint64_t>());

    const std::uint64_t count = detail::read_u64(in);
    if (count != model.tensors().size())
        throw std::runtime_error("load_checkpoint: tensor count mismatch in " + path);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t nlen = detail::read_u64(in);
        std::string name(nlen, '\0');
        in.read(name.data(), static_cast<std::streamsize>(nlen));
        const std::uint64_t rank = detail::read_u64(in);
        std::vector<int> dims(rank);
        for (auto& d : dims) d = static_cast<int>(detail::read_u64(in));
        Tensor& t = model.tensor(name);
        if (t.shape() != dims) throw std::runtime_error("load_checkpoint: shape mismatch at " + name);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw std::runtime_error("load_checkpoint: truncated tensor " + name);
    }
    return model;
}

} // namespace maskkit

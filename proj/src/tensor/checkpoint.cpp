// SPDX-License-Identifier: Apache-2.0

#include "molgen/tensor/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

#include "molgen/util/io.hpp"

namespace molgen::tensor {
namespace {

constexpr char kMagic[8] = {'M', 'O', 'L', 'G', 'E', 'N', 'C', 'K'};

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }
}

template <typename T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw CheckpointError("truncated checkpoint");
  return to_little(v);
}

void put_doubles(std::ostream& out, const Tensor& t) {
  for (const double v : t.data()) put(out, v);
}

void get_doubles(std::istream& in, Tensor& t) {
  for (double& v : t.data()) v = get<double>(in);
}

std::string escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    if (c == '\\') {
      out += "\\\\";
    } else if (c == '\n') {
      out += "\\n";
    } else {
      out += c;
    }
  }
  return out;
}

std::string unescape(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      out += s[i + 1] == 'n' ? '\n' : s[i + 1];
      ++i;
    } else {
      out += s[i];
    }
  }
  return out;
}

}  // namespace

void write_checkpoint(std::ostream& out, const std::map<std::string, std::string>& header,
                      const ParamStore& params) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  std::string text;
  for (const auto& [key, value] : header) {
    if (key.find('=') != std::string::npos || key.find('\n') != std::string::npos) {
      throw CheckpointError("invalid header key " + key);
    }
    text += key + "=" + escape(value) + "\n";
  }
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::int64_t>(out, params.adam_steps());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params.parameters()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint8_t>(out, p.trainable ? 1 : 0);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rank()));
    for (const auto e : p.value.shape()) put<std::uint64_t>(out, e);
    put_doubles(out, p.value);
    const bool moments = p.adam_m.shape() == p.value.shape() && p.adam_v.shape() == p.value.shape();
    put<std::uint8_t>(out, moments ? 1 : 0);
    if (moments) {
      put_doubles(out, p.adam_m);
      put_doubles(out, p.adam_v);
    }
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a molgen checkpoint");
  }
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto header_bytes = get<std::uint64_t>(in);
  std::string text(header_bytes, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_bytes));
  if (!in) throw CheckpointError("truncated checkpoint header");
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    const std::string line = text.substr(start, end - start);
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("malformed header line");
    ck.header[line.substr(0, eq)] = unescape(line.substr(eq + 1));
    start = end == std::string::npos ? text.size() : end + 1;
  }
  ck.params.set_adam_steps(get<std::int64_t>(in));
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_bytes = get<std::uint32_t>(in);
    std::string name(name_bytes, '\0');
    in.read(name.data(), name_bytes);
    if (!in) throw CheckpointError("truncated parameter name");
    const bool trainable = get<std::uint8_t>(in) != 0;
    const auto rank = get<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& e : shape) e = get<std::uint64_t>(in);
    Parameter& p = ck.params.add(std::move(name), Tensor(shape), trainable);
    get_doubles(in, p.value);
    if (get<std::uint8_t>(in) != 0) {
      p.adam_m = Tensor(shape);
      p.adam_v = Tensor(shape);
      get_doubles(in, p.adam_m);
      get_doubles(in, p.adam_v);
    }
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::map<std::string, std::string>& header, const ParamStore& params) {
  write_file_atomic(path, [&](std::ostream& out) { write_checkpoint(out, header, params); }, true);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace molgen::tensor

#include "nowcast/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace nowcast {

namespace {

constexpr char kMagic[5] = {'N', 'W', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Cursor {
  const std::string& bytes;
  size_t pos = 0;
  void need(size_t n, const std::string& what) {
    if (pos + n > bytes.size()) throw std::runtime_error("checkpoint: truncated while reading " + what);
  }
  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
    return v;
  }
  std::uint64_t u64(const std::string& what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos++])) << (8 * i);
    return v;
  }
  std::string str(size_t n, const std::string& what) {
    need(n, what);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

void atomic_write_file(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("atomic_write_file: cannot open " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("atomic_write_file: write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("atomic_write_file: rename failed for " + path.string() + ": " + ec.message());
}

void save_checkpoint(const std::filesystem::path& path, NowcastModel<float>& model, std::uint64_t seed,
                     const std::string& extra_json) {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);

  std::ostringstream header;
  header << "{\"config\":" << model.config().to_json() << ",\"seed\":" << seed;
  if (!extra_json.empty()) header << ",\"extra\":" << extra_json;
  header << "}";
  const std::string h = header.str();
  put_u32(out, static_cast<std::uint32_t>(h.size()));
  out += h;

  const auto refs = model.state_refs();
  put_u32(out, static_cast<std::uint32_t>(refs.size()));
  for (const auto& r : refs) {
    put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out += r.name;
    put_u64(out, static_cast<std::uint64_t>(r.value->numel()));
    for (long i = 0; i < r.value->numel(); ++i) {
      std::uint32_t bits;
      const float v = (*r.value)[i];
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
  atomic_write_file(path, out);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string bytes = ss.str();
  Cursor cur{bytes};

  const std::string magic = cur.str(sizeof(kMagic), "magic");
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  const std::uint32_t version = cur.u32("version");
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version in " + path.string());

  const std::uint32_t hlen = cur.u32("header length");
  const std::string header = cur.str(hlen, "header");

  LoadedCheckpoint loaded;
  const nlohmann::json h = nlohmann::json::parse(header);
  loaded.config = ModelConfig::from_json(h.at("config").dump());
  loaded.seed = h.at("seed");
  if (h.contains("extra")) loaded.extra_json = h.at("extra").dump();

  loaded.model = std::make_unique<NowcastModel<float>>(loaded.config);
  auto refs = loaded.model->state_refs();

  const std::uint32_t count = cur.u32("blob count");
  if (count != refs.size()) throw std::runtime_error("checkpoint: blob count does not match model in " + path.string());
  for (std::uint32_t b = 0; b < count; ++b) {
    const std::uint32_t nlen = cur.u32("blob name length");
    const std::string name = cur.str(nlen, "blob name");
    const std::uint64_t numel = cur.u64("blob size");
    if (name != refs[b].name || static_cast<long>(numel) != refs[b].value->numel())
      throw std::runtime_error("checkpoint: blob '" + name + "' does not match model parameter '" + refs[b].name +
                               "' in " + path.string());
    for (std::uint64_t i = 0; i < numel; ++i) {
      const std::uint32_t bits = cur.u32("blob data");
      float v;
      std::memcpy(&v, &bits, 4);
      (*refs[b].value)[static_cast<long>(i)] = v;
    }
  }
  return loaded;
}

}  // namespace nowcast

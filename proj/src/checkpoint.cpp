#include "hybrid/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace hybrid {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

constexpr char kMagic[8] = {'H', 'Y', 'B', 'R', 'I', 'D', 'C', 'K'};

template <class T>
void put(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof value);
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  template <class T>
  T get() {
    T value{};
    bytes(&value, sizeof value);
    return value;
  }
  void bytes(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("truncated");
  }
  std::string string(std::size_t n) {
    if (n > (std::size_t{1} << 30)) fail("implausible string length " + std::to_string(n));
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError("checkpoint " + path_ + ": " + what);
  }

 private:
  std::istream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const PairModel& model, const RunConfig& config) {
  RunConfig stored = config;
  stored.model = model.config();
  const std::string json = to_json(stored);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, sizeof(Real));
    put<std::uint64_t>(out, json.size());
    out.write(json.data(), static_cast<std::streamsize>(json.size()));
    const auto& items = model.params().items();
    put<std::uint64_t>(out, items.size());
    for (const auto& p : items) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
      out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      const Shape& shape = p.tensor.shape();
      put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
      for (std::size_t d : shape) put<std::uint64_t>(out, d);
      const auto values = p.tensor.data();
      out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
    }
    if (!out) throw DataError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) r.fail("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    r.fail("version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  }
  const auto width = r.get<std::uint32_t>();
  if (width != 4 && width != 8) r.fail("unsupported value width " + std::to_string(width));

  LoadedCheckpoint loaded;
  try {
    loaded.config = run_config_from_json(r.string(r.get<std::uint64_t>()));
  } catch (const ConfigError& e) {
    r.fail(std::string("embedded config: ") + e.what());
  }
  loaded.model = std::make_unique<PairModel>(loaded.config.model, loaded.config.train.seed);
  auto& items = loaded.model->params().items();
  const auto count = r.get<std::uint64_t>();
  if (count != items.size()) {
    r.fail(std::to_string(count) + " parameters, model expects " + std::to_string(items.size()));
  }
  for (const auto& p : items) {
    const std::string name = r.string(r.get<std::uint32_t>());
    if (name != p.name) r.fail("parameter '" + name + "' where '" + p.name + "' was expected");
    Shape shape(r.get<std::uint32_t>());
    for (auto& d : shape) d = r.get<std::uint64_t>();
    if (shape != p.tensor.shape()) {
      r.fail("parameter '" + name + "' has shape " + shape_to_string(shape) + ", model expects " +
             shape_to_string(p.tensor.shape()));
    }
    Tensor t = p.tensor;
    auto dst = t.data();
    if (width == sizeof(Real)) {
      r.bytes(dst.data(), dst.size_bytes());
    } else if (width == 4) {
      std::vector<float> tmp(dst.size());
      r.bytes(tmp.data(), tmp.size() * sizeof(float));
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(tmp[i]);
    } else {
      std::vector<double> tmp(dst.size());
      r.bytes(tmp.data(), tmp.size() * sizeof(double));
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(tmp[i]);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return loaded;
}

}  // namespace hybrid

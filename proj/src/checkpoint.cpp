#include "psal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <json.hpp>

#include "psal/config.hpp"
#include "psal/error.hpp"

namespace psal {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'S', 'A', 'L'};

// Tensor groups in file order.
struct Group {
  const char* prefix;
  std::vector<NamedTensor>* entries;
};

std::vector<Group> groups_of(Checkpoint& c) {
  return {{"generator/", &c.generator.entries()},
          {"discriminator/", &c.discriminator.entries()},
          {"opt_g.mean_square/", &c.opt_g.mean_square},
          {"opt_g.velocity/", &c.opt_g.velocity},
          {"opt_d.mean_square/", &c.opt_d.mean_square},
          {"opt_d.velocity/", &c.opt_d.velocity}};
}

template <class T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& pos, const fs::path& path) {
  if (in.size() < pos + sizeof(T)) throw CorruptionError(path.string() + ": truncated checkpoint");
  T value;
  std::memcpy(&value, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return value;
}

}  // namespace

bool Checkpoint::operator==(const Checkpoint& o) const {
  return net == o.net && train == o.train && generator.same_values(o.generator) &&
         discriminator.same_values(o.discriminator) && opt_g.same_values(o.opt_g) && opt_d.same_values(o.opt_d) &&
         epoch == o.epoch && rng == o.rng;
}

void save_checkpoint(const Checkpoint& checkpoint, const fs::path& path) {
  auto& c = const_cast<Checkpoint&>(checkpoint);
  json table = json::array();
  std::size_t offset = 0;
  std::string blocks;
  for (const auto& g : groups_of(c)) {
    for (const auto& e : *g.entries) {
      table.push_back({{"name", g.prefix + e.name},
                       {"shape", e.tensor.shape()},
                       {"offset", offset},
                       {"trainable", e.trainable}});
      for (double v : e.tensor.values()) put(blocks, v);
      offset += e.tensor.numel();
    }
  }
  json header{{"net", to_json(c.net)},
              {"train", to_json(c.train)},
              {"epoch", c.epoch},
              {"rng", {{"seed", c.rng.seed()}, {"counter", c.rng.counter()}}},
              {"opt_g_step", c.opt_g.step},
              {"opt_d_step", c.opt_d.step},
              {"total_values", offset},
              {"tensors", std::move(table)}};
  const std::string header_text = header.dump();

  std::string out(kMagic, 4);
  put(out, Checkpoint::kVersion);
  put(out, static_cast<std::uint64_t>(header_text.size()));
  out += header_text;
  out += blocks;

  // Write to a sibling file first so a failed save never clobbers the old one.
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (in.size() < 4 || std::memcmp(in.data(), kMagic, 4) != 0)
    throw CompatibilityError(path.string() + ": not a checkpoint (bad magic)");
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(in, pos, path);
  if (version != Checkpoint::kVersion)
    throw CompatibilityError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto header_len = take<std::uint64_t>(in, pos, path);
  if (in.size() < pos + header_len) throw CorruptionError(path.string() + ": truncated checkpoint header");

  Checkpoint c;
  json header;
  try {
    header = json::parse(in.substr(pos, header_len));
  } catch (const json::exception& e) {
    throw CorruptionError(path.string() + ": malformed header: " + e.what());
  }
  pos += header_len;

  try {
    c.net = net_config_from_json(header.at("net"));
    c.train = train_config_from_json(header.at("train"));
    c.epoch = header.at("epoch").get<std::size_t>();
    c.rng = Rng(header.at("rng").at("seed").get<std::uint64_t>(), header.at("rng").at("counter").get<std::uint64_t>());
    c.opt_g.step = header.at("opt_g_step").get<std::uint64_t>();
    c.opt_d.step = header.at("opt_d_step").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw CorruptionError(path.string() + ": malformed header: " + e.what());
  }
  try {
    c.net.validate();
  } catch (const ParameterError& e) {
    throw CompatibilityError(path.string() + ": " + e.what());
  }

  const auto total = header.value("total_values", std::uint64_t{0});
  if (in.size() != pos + total * sizeof(double)) throw CorruptionError(path.string() + ": truncated tensor data");

  auto groups = groups_of(c);
  for (const auto& t : header.at("tensors")) {
    const auto full = t.at("name").get<std::string>();
    Group* group = nullptr;
    for (auto& g : groups)
      if (full.rfind(g.prefix, 0) == 0) group = &g;
    if (!group) throw CorruptionError(path.string() + ": unknown tensor group in " + full);
    const auto shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::size_t>();
    const auto count = shape_numel(shape);
    if (offset + count > total) throw CorruptionError(path.string() + ": tensor " + full + " out of range");
    std::vector<double> values(count);
    std::memcpy(values.data(), in.data() + pos + offset * sizeof(double), count * sizeof(double));
    const bool trainable = t.value("trainable", false);
    Tensor tensor(shape, std::move(values));
    tensor.set_requires_grad(trainable && (group->entries == &c.generator.entries() ||
                                           group->entries == &c.discriminator.entries()));
    group->entries->push_back({full.substr(std::strlen(group->prefix)), tensor, trainable});
  }

  // The stored parameters must be exactly those of the stored configuration.
  auto check = [&](const ParamSet& expected, const ParamSet& got, const char* what) {
    const auto& a = expected.entries();
    const auto& b = got.entries();
    if (a.size() != b.size())
      throw CompatibilityError(path.string() + ": " + what + " parameter count does not match its config");
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].name != b[i].name || a[i].tensor.shape() != b[i].tensor.shape())
        throw CompatibilityError(path.string() + ": " + what + " parameter " + b[i].name +
                                 " does not match its config");
  };
  check(Generator(c.net).params(), c.generator, "generator");
  check(Discriminator(c.net).params(), c.discriminator, "discriminator");
  return c;
}

}  // namespace psal

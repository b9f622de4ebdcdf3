#include "latkit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "latkit/binio.hpp"
#include "latkit/error.hpp"

namespace latkit {

namespace {

constexpr std::string_view kDatasetMagic = "LATKDATA";
constexpr std::uint32_t kDatasetVersion = 1;

}  // namespace

std::string_view to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::image_cls: return "image-cls";
    case TaskKind::text_cls: return "text-cls";
    case TaskKind::text_gen: return "text-gen";
  }
  return "?";
}

TaskKind parse_task_kind(std::string_view text) {
  for (auto k : {TaskKind::image_cls, TaskKind::text_cls, TaskKind::text_gen})
    if (to_string(k) == text) return k;
  throw ConfigError("unknown task kind '" + std::string(text) + "' (expected image-cls, text-cls or text-gen)");
}

std::size_t Dataset::target_width() const {
  return task == TaskKind::text_gen ? example_size() : 1;
}

std::span<const double> Dataset::input(std::size_t i) const {
  return std::span<const double>(inputs).subspan(i * example_size(), example_size());
}
std::span<double> Dataset::mutable_input(std::size_t i) {
  return std::span<double>(inputs).subspan(i * example_size(), example_size());
}
std::span<const int> Dataset::target(std::size_t i) const {
  return std::span<const int>(targets).subspan(i * target_width(), target_width());
}
std::span<int> Dataset::mutable_target(std::size_t i) {
  return std::span<int>(targets).subspan(i * target_width(), target_width());
}

void Dataset::push_back(std::span<const double> in, std::span<const int> target, ExampleMeta m) {
  if (in.size() != example_size() || target.size() != target_width()) {
    throw DimensionError("dataset example has " + std::to_string(in.size()) + " inputs / " +
                         std::to_string(target.size()) + " targets, expected " + std::to_string(example_size()) +
                         " / " + std::to_string(target_width()));
  }
  inputs.insert(inputs.end(), in.begin(), in.end());
  targets.insert(targets.end(), target.begin(), target.end());
  meta.push_back(m);
}

void Dataset::append(const Dataset& other) {
  if (other.task != task || other.example_shape != example_shape) {
    throw DimensionError("cannot append datasets of different shape or task");
  }
  inputs.insert(inputs.end(), other.inputs.begin(), other.inputs.end());
  targets.insert(targets.end(), other.targets.begin(), other.targets.end());
  meta.insert(meta.end(), other.meta.begin(), other.meta.end());
}

Batch Dataset::batch(std::span<const std::size_t> indices) const {
  ad::Shape shape = example_shape;
  shape.insert(shape.begin(), indices.size());
  std::vector<double> x;
  x.reserve(indices.size() * example_size());
  std::vector<int> y;
  y.reserve(indices.size() * target_width());
  for (auto i : indices) {
    if (i >= size()) throw IndexError("dataset index " + std::to_string(i) + " out of range");
    auto in = input(i);
    auto t = target(i);
    x.insert(x.end(), in.begin(), in.end());
    y.insert(y.end(), t.begin(), t.end());
  }
  return {ad::Tensor(std::move(shape), std::move(x)), std::move(y)};
}

Batch Dataset::all() const {
  std::vector<std::size_t> idx(size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return batch(idx);
}

Dataset Dataset::like() const {
  Dataset d;
  d.task = task;
  d.example_shape = example_shape;
  d.classes = classes;
  d.vocab = vocab;
  d.input_range = input_range;
  return d;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset d = like();
  for (auto i : indices) d.push_back(input(i), target(i), meta.at(i));
  return d;
}

void Dataset::validate() const {
  if (example_shape.empty() || example_size() == 0) throw FormatError("dataset has an empty example shape");
  if (inputs.size() != size() * example_size()) throw FormatError("dataset input buffer size mismatch");
  if (targets.size() != size() * target_width()) throw FormatError("dataset target buffer size mismatch");
  if (task != TaskKind::image_cls) {
    for (double t : inputs) {
      if (t < 0 || t >= static_cast<double>(vocab) || t != std::floor(t)) {
        throw FormatError("dataset token " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab));
      }
    }
  }
  for (int t : targets) {
    if (t == ad::kIgnoreLabel) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= classes) {
      throw FormatError("dataset target " + std::to_string(t) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

std::vector<std::size_t> label_histogram(const Dataset& data, bool clean_only) {
  std::vector<std::size_t> h(data.classes, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (clean_only && data.meta[i].poisoned()) continue;
    const int y = data.target(i)[0];
    if (y >= 0) ++h.at(static_cast<std::size_t>(y));
  }
  return h;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  data.validate();
  binio::Writer w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u8(static_cast<std::uint8_t>(data.task));
  w.u32(static_cast<std::uint32_t>(data.example_shape.size()));
  for (auto e : data.example_shape) w.u64(e);
  w.u64(data.classes);
  w.u64(data.vocab);
  w.u8(data.input_range.has_value());
  w.f64(data.input_range ? data.input_range->lo : 0.0);
  w.f64(data.input_range ? data.input_range->hi : 0.0);
  w.u64(data.size());
  for (double v : data.inputs) w.f64(v);
  for (int t : data.targets) w.i32(t);
  for (const auto& m : data.meta) {
    w.i32(m.backdoor_id);
    w.u8(static_cast<std::uint8_t>(m.distribution));
  }
  binio::write_file_atomic(path, w.data());

  std::size_t poisoned = 0;
  std::vector<int> backdoors;
  for (const auto& m : data.meta) {
    if (!m.poisoned()) continue;
    ++poisoned;
    if (std::find(backdoors.begin(), backdoors.end(), m.backdoor_id) == backdoors.end())
      backdoors.push_back(m.backdoor_id);
  }
  std::sort(backdoors.begin(), backdoors.end());
  nlohmann::ordered_json side;
  side["format"] = "latkit-dataset";
  side["version"] = kDatasetVersion;
  side["task"] = to_string(data.task);
  side["examples"] = data.size();
  side["example_shape"] = data.example_shape;
  side["classes"] = data.classes;
  if (data.vocab > 0) side["vocab"] = data.vocab;
  if (data.input_range) side["input_range"] = {data.input_range->lo, data.input_range->hi};
  side["poisoned_examples"] = poisoned;
  side["backdoor_ids"] = backdoors;
  auto side_path = path;
  side_path += ".json";
  binio::write_file_atomic(side_path, side.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& path) {
  binio::Reader r(binio::read_file(path), path.string());
  if (r.bytes(kDatasetMagic.size(), "magic") != kDatasetMagic) r.fail("not a latkit dataset (bad magic)");
  const auto version = r.u32("version");
  if (version != kDatasetVersion) r.fail("unsupported dataset version " + std::to_string(version));
  Dataset d;
  const auto task = r.u8("task");
  if (task > 2) r.fail("unknown task code " + std::to_string(task));
  d.task = static_cast<TaskKind>(task);
  const auto rank = r.u32("rank");
  if (rank == 0 || rank > 8) r.fail("implausible example rank " + std::to_string(rank));
  for (std::uint32_t i = 0; i < rank; ++i) d.example_shape.push_back(r.u64("extent"));
  d.classes = r.u64("classes");
  d.vocab = r.u64("vocab");
  const bool has_range = r.u8("range flag") != 0;
  const double lo = r.f64("range lo"), hi = r.f64("range hi");
  if (has_range) d.input_range = InputRange{lo, hi};
  const auto n = r.u64("example count");
  const auto width = d.example_size();
  if (width == 0 || n > r.remaining() / (8 * width + 4 * d.target_width() + 5)) {
    r.fail("example count " + std::to_string(n) + " exceeds the file payload");
  }
  d.inputs.resize(n * width);
  for (auto& v : d.inputs) v = r.f64("inputs");
  d.targets.resize(n * d.target_width());
  for (auto& t : d.targets) t = r.i32("targets");
  d.meta.resize(n);
  for (auto& m : d.meta) {
    m.backdoor_id = r.i32("backdoor id");
    const auto dist = r.u8("distribution");
    if (dist > 1) r.fail("unknown distribution code " + std::to_string(dist));
    m.distribution = static_cast<Distribution>(dist);
  }
  if (!r.at_end()) r.fail("trailing bytes after dataset payload");
  d.validate();
  return d;
}

namespace {

struct IdxHeader {
  std::vector<std::size_t> dims;
};

std::uint32_t be32(binio::Reader& r, std::string_view what) {
  const auto b = r.bytes(4, what);
  std::uint32_t v = 0;
  for (char c : b) v = (v << 8) | static_cast<unsigned char>(c);
  return v;
}

IdxHeader read_idx_header(binio::Reader& r, std::size_t expected_rank) {
  const auto magic = r.bytes(4, "magic");
  if (magic[0] != 0 || magic[1] != 0) r.fail("bad IDX magic (first two bytes must be zero)");
  if (static_cast<unsigned char>(magic[2]) != 0x08) r.fail("unsupported IDX element type (only unsigned byte)");
  const auto rank = static_cast<std::size_t>(static_cast<unsigned char>(magic[3]));
  if (rank != expected_rank) {
    r.fail("IDX rank " + std::to_string(rank) + ", expected " + std::to_string(expected_rank));
  }
  IdxHeader h;
  for (std::size_t i = 0; i < rank; ++i) h.dims.push_back(be32(r, "dimension size"));
  return h;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  binio::Reader ir(binio::read_file(images), images.string());
  binio::Reader lr(binio::read_file(labels), labels.string());
  const auto ih = read_idx_header(ir, 3);
  const auto lh = read_idx_header(lr, 1);
  if (ih.dims[0] != lh.dims[0]) {
    lr.fail("label count " + std::to_string(lh.dims[0]) + " does not match image count " +
            std::to_string(ih.dims[0]));
  }
  const auto n = ih.dims[0], rows = ih.dims[1], cols = ih.dims[2];
  if (rows == 0 || cols == 0) ir.fail("zero image extent");
  Dataset d;
  d.task = TaskKind::image_cls;
  d.example_shape = {1, rows, cols};
  d.input_range = InputRange{0.0, 1.0};
  const auto pixels = ir.bytes(n * rows * cols, "pixel data");
  const auto label_bytes = lr.bytes(n, "label data");
  if (!ir.at_end()) ir.fail("trailing bytes after pixel data");
  if (!lr.at_end()) lr.fail("trailing bytes after label data");
  d.inputs.resize(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) d.inputs[i] = static_cast<unsigned char>(pixels[i]) / 255.0;
  std::size_t classes = 0;
  d.targets.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.targets[i] = static_cast<unsigned char>(label_bytes[i]);
    classes = std::max<std::size_t>(classes, static_cast<std::size_t>(d.targets[i]) + 1);
  }
  d.classes = classes;
  d.meta.resize(n);
  return d;
}

}  // namespace latkit

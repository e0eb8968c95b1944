#include "reptrfd/io.hpp"
#include "reptrfd/errors.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <unistd.h>

namespace reptrfd {

namespace {

template <typename T> void put_le(std::string &out, T v)
{
  static_assert(std::is_trivially_copyable_v<T>);
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big) { std::reverse(bytes.begin(), bytes.end()); }
  out.append(bytes.data(), bytes.size());
}

class Reader {
public:
  Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  template <typename T> T get()
  {
    need(sizeof(T));
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    if constexpr (std::endian::native == std::endian::big) { std::reverse(bytes.begin(), bytes.end()); }
    return std::bit_cast<T>(bytes);
  }

  void magic(std::string_view m)
  {
    need(m.size());
    if (data_.substr(pos_, m.size()) != m) { throw FormatError(what_ + ": bad magic, expected \"" + std::string(m) + "\""); }
    pos_ += m.size();
  }

  void read_doubles(std::span<double> out)
  {
    need(out.size() * sizeof(double));
    for (double &v : out) { v = get<double>(); }
  }

  std::size_t remaining() const { return data_.size() - pos_; }

  void finish() const
  {
    if (remaining() != 0) {
      throw FormatError(what_ + ": " + std::to_string(remaining()) + " unexpected trailing bytes");
    }
  }

  [[noreturn]] void fail(std::string const &msg) const { throw FormatError(what_ + ": " + msg); }

private:
  void need(std::size_t n) const
  {
    if (remaining() < n) {
      throw FormatError(what_ + ": truncated (needed " + std::to_string(n) + " bytes at offset " +
                        std::to_string(pos_) + ", " + std::to_string(remaining()) + " left)");
    }
  }

  std::string_view data_;
  std::string what_;
  std::size_t pos_ = 0;
};

// Upper bound on element counts read from headers before allocating.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

Shape read_dims(Reader &in, std::uint64_t count)
{
  Shape dims;
  std::uint64_t total = 1;
  for (std::uint64_t i = 0; i < count; ++i) {
    auto const n = in.get<std::uint64_t>();
    if (n == 0) { in.fail("dimension " + std::to_string(i) + " is zero"); }
    if (n > kMaxElements || total > kMaxElements / n) { in.fail("dimensions too large"); }
    total *= n;
    dims.push_back(static_cast<Index>(n));
  }
  return dims;
}

} // namespace

void write_file_atomic(fs::path const &path, std::string_view bytes)
{
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) { throw FormatError("cannot open " + tmp.string() + " for writing"); }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw FormatError("write failed: " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw FormatError("cannot move " + tmp.string() + " to " + path.string());
  }
}

std::string read_file(fs::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw FormatError("cannot open " + path.string()); }
  std::ostringstream os;
  os << in.rdbuf();
  if (in.bad()) { throw FormatError("read failed: " + path.string()); }
  return os.str();
}

// ---- RTEN ----

std::string encode_rten(DenseTensor const &x)
{
  std::string out;
  out.reserve(12 + 8 * x.shape().size() + 8 * static_cast<std::size_t>(x.size()));
  out.append("RTEN");
  put_le(out, kRtenVersion);
  put_le(out, static_cast<std::uint32_t>(x.order()));
  for (Index n : x.shape()) { put_le(out, static_cast<std::uint64_t>(n)); }
  for (double v : x.data()) { put_le(out, v); }
  return out;
}

namespace {

RtenHeader read_rten_header(Reader &in)
{
  in.magic("RTEN");
  RtenHeader h;
  h.version = in.get<std::uint32_t>();
  if (h.version != kRtenVersion) { in.fail("unsupported version " + std::to_string(h.version)); }
  auto const order = in.get<std::uint32_t>();
  if (order == 0) { in.fail("order must be >= 1"); }
  h.dims = read_dims(in, order);
  return h;
}

} // namespace

RtenHeader decode_rten_header(std::string_view bytes)
{
  Reader in(bytes, "RTEN");
  return read_rten_header(in);
}

DenseTensor decode_rten(std::string_view bytes)
{
  Reader in(bytes, "RTEN");
  auto h = read_rten_header(in);
  auto const count = static_cast<std::size_t>(shape_product(h.dims));
  if (in.remaining() != count * sizeof(double)) {
    in.fail("payload is " + std::to_string(in.remaining()) + " bytes, expected " +
            std::to_string(count * sizeof(double)));
  }
  std::vector<double> data(count);
  in.read_doubles(data);
  return DenseTensor(std::move(h.dims), std::move(data));
}

void save_rten(DenseTensor const &x, fs::path const &path) { write_file_atomic(path, encode_rten(x)); }

DenseTensor load_rten(fs::path const &path)
{
  try {
    return decode_rten(read_file(path));
  } catch (FormatError const &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---- RTRF ----

namespace {

constexpr std::uint32_t kFlagShared = 1u << 0;
constexpr std::uint32_t kFlagBasisTrainable = 1u << 1;

} // namespace

std::string encode_checkpoint(FactorModel const &model)
{
  auto const &c = model.config();
  std::string out;
  out.append("RTRF");
  put_le(out, kRtrfVersion);
  put_le(out, static_cast<std::uint32_t>(c.variant));
  put_le(out, static_cast<std::uint32_t>(c.basis_scheme));
  put_le(out, c.basis_scale);
  put_le(out, (c.shared_embedding ? kFlagShared : 0u) | (c.basis_trainable ? kFlagBasisTrainable : 0u));
  put_le(out, static_cast<std::uint64_t>(c.seed));
  put_le(out, static_cast<std::uint32_t>(c.order()));
  put_le(out, static_cast<std::uint32_t>(c.dims.size()));
  for (Index n : c.dims) { put_le(out, static_cast<std::uint64_t>(n)); }
  for (Index r : c.ranks) { put_le(out, static_cast<std::uint64_t>(r)); }
  for (Index l : c.layers) { put_le(out, static_cast<std::uint64_t>(l)); }
  put_le(out, static_cast<std::uint64_t>(c.beta));
  put_le(out, c.omega0);
  put_le(out, static_cast<std::uint64_t>(c.hidden));

  auto const params = model.parameters();
  put_le(out, static_cast<std::uint64_t>(params.size()));
  for (auto const &p : params) {
    put_le(out, static_cast<std::uint32_t>(p.value->order()));
    for (Index n : p.value->shape()) { put_le(out, static_cast<std::uint64_t>(n)); }
  }
  for (auto const &p : params) {
    for (double v : p.value->data()) { put_le(out, v); }
  }
  return out;
}

FactorModel decode_checkpoint(std::string_view bytes)
{
  Reader in(bytes, "RTRF");
  in.magic("RTRF");
  auto const version = in.get<std::uint32_t>();
  if (version != kRtrfVersion) { in.fail("unsupported version " + std::to_string(version)); }

  ModelConfig c;
  auto const variant = in.get<std::uint32_t>();
  if (variant > 1) { in.fail("unknown variant code " + std::to_string(variant)); }
  c.variant = static_cast<Variant>(variant);
  auto const scheme = in.get<std::uint32_t>();
  if (scheme > 2) { in.fail("unknown basis scheme code " + std::to_string(scheme)); }
  c.basis_scheme = static_cast<BasisScheme>(scheme);
  c.basis_scale = in.get<double>();
  auto const flags = in.get<std::uint32_t>();
  if ((flags & ~(kFlagShared | kFlagBasisTrainable)) != 0) { in.fail("unknown flag bits"); }
  c.shared_embedding = (flags & kFlagShared) != 0;
  c.basis_trainable = (flags & kFlagBasisTrainable) != 0;
  c.seed = in.get<std::uint64_t>();
  auto const d = in.get<std::uint32_t>();
  auto const ndims = in.get<std::uint32_t>();
  if (d == 0 || d > 64) { in.fail("implausible order " + std::to_string(d)); }
  if (ndims != 0 && ndims != d) { in.fail("dims count does not match order"); }
  c.dims = read_dims(in, ndims);
  for (std::uint32_t k = 0; k < d; ++k) { c.ranks.push_back(static_cast<Index>(in.get<std::uint64_t>())); }
  for (std::uint32_t k = 0; k < d; ++k) { c.layers.push_back(static_cast<Index>(in.get<std::uint64_t>())); }
  c.beta = static_cast<Index>(in.get<std::uint64_t>());
  c.omega0 = in.get<double>();
  c.hidden = static_cast<Index>(in.get<std::uint64_t>());
  try {
    c.validate();
  } catch (ConfigError const &e) {
    in.fail(std::string("manifest: ") + e.what());
  }
  for (Index v : c.ranks) {
    if (v > 1 << 16) { in.fail("implausible rank"); }
  }
  if (c.hidden > 1 << 20 || c.beta > 1 << 16) { in.fail("implausible width"); }

  auto model = FactorModel::init(c);
  auto params = model.parameters();
  auto const count = in.get<std::uint64_t>();
  if (count != params.size()) {
    in.fail("manifest lists " + std::to_string(count) + " arrays, model has " + std::to_string(params.size()));
  }
  for (auto const &p : params) {
    auto const order = in.get<std::uint32_t>();
    auto const shape = read_dims(in, order);
    if (shape != p.value->shape()) {
      in.fail(p.name + " has shape " + shape_string(shape) + ", expected " + shape_string(p.value->shape()));
    }
  }
  for (auto &p : params) { in.read_doubles(p.value->data()); }
  in.finish();
  return model;
}

void save_checkpoint(FactorModel const &model, fs::path const &path)
{
  write_file_atomic(path, encode_checkpoint(model));
}

FactorModel load_checkpoint(fs::path const &path)
{
  try {
    return decode_checkpoint(read_file(path));
  } catch (FormatError const &e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

// ---- PNG ----

namespace {

struct PngImage {
  png_image image{};
  PngImage()
  {
    image.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&image); }
  PngImage(PngImage const &) = delete;
  PngImage &operator=(PngImage const &) = delete;
};

// Reads the IHDR fields directly; the simplified API hides the bit depth.
PngInfo read_ihdr(fs::path const &path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) { throw FormatError("cannot open " + path.string()); }
  std::array<unsigned char, 33> head{};
  in.read(reinterpret_cast<char *>(head.data()), head.size());
  if (in.gcount() != static_cast<std::streamsize>(head.size()) || png_sig_cmp(head.data(), 0, 8) != 0 ||
      std::memcmp(head.data() + 12, "IHDR", 4) != 0) {
    throw FormatError(path.string() + ": not a PNG file");
  }
  auto be32 = [&](std::size_t at) {
    return (Index{head[at]} << 24) | (Index{head[at + 1]} << 16) | (Index{head[at + 2]} << 8) | Index{head[at + 3]};
  };
  PngInfo info;
  info.width = be32(16);
  info.height = be32(20);
  info.bit_depth = head[24];
  switch (head[25]) {
  case PNG_COLOR_TYPE_GRAY: info.channels = 1; break;
  case PNG_COLOR_TYPE_RGB: info.channels = 3; break;
  case PNG_COLOR_TYPE_GRAY_ALPHA: info.channels = 2; break;
  case PNG_COLOR_TYPE_RGB_ALPHA: info.channels = 4; break;
  case PNG_COLOR_TYPE_PALETTE: info.channels = 0; break;
  default: throw FormatError(path.string() + ": unknown PNG color type");
  }
  return info;
}

} // namespace

PngInfo probe_png(fs::path const &path) { return read_ihdr(path); }

DenseTensor load_png(fs::path const &path)
{
  auto const info = read_ihdr(path);
  if (info.bit_depth != 8) {
    throw FormatError(path.string() + ": unsupported bit depth " + std::to_string(info.bit_depth) +
                      " (only 8-bit grayscale or RGB)");
  }
  if (info.channels != 1 && info.channels != 3) {
    throw FormatError(path.string() + ": unsupported color type (only 8-bit grayscale or RGB, no alpha or palette)");
  }
  PngImage png;
  if (!png_image_begin_read_from_file(&png.image, path.string().c_str())) {
    throw FormatError(path.string() + ": " + png.image.message);
  }
  png.image.format = info.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(png.image));
  if (!png_image_finish_read(&png.image, nullptr, buf.data(), 0, nullptr)) {
    throw FormatError(path.string() + ": " + png.image.message);
  }
  Index const h = png.image.height, w = png.image.width;
  Shape shape = info.channels == 1 ? Shape{h, w} : Shape{h, w, 3};
  DenseTensor x(shape);
  for (std::size_t i = 0; i < buf.size(); ++i) { x[static_cast<Index>(i)] = buf[i] / 255.0; }
  return x;
}

void save_png(DenseTensor const &x, fs::path const &path)
{
  Index channels = 0;
  if (x.order() == 2) {
    channels = 1;
  } else if (x.order() == 3 && (x.dim(2) == 1 || x.dim(2) == 3)) {
    channels = x.dim(2);
  } else {
    throw ShapeError("save_png: expected (H, W), (H, W, 1) or (H, W, 3), got " + shape_string(x.shape()));
  }
  std::vector<unsigned char> buf(static_cast<std::size_t>(x.size()));
  for (Index i = 0; i < x.size(); ++i) {
    double const v = std::clamp(x[i], 0.0, 1.0);
    buf[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::floor(v * 255.0 + 0.5));
  }
  PngImage png;
  png.image.width = static_cast<png_uint_32>(x.dim(1));
  png.image.height = static_cast<png_uint_32>(x.dim(0));
  png.image.format = channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  if (!png_image_write_to_file(&png.image, tmp.string().c_str(), 0, buf.data(), 0, nullptr)) {
    throw FormatError(path.string() + ": " + png.image.message);
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw FormatError("cannot move " + tmp.string() + " to " + path.string());
  }
}

DenseTensor load_tensor(fs::path const &path)
{
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png" ? load_png(path) : load_rten(path);
}

// ---- point clouds ----

DenseTensor normalize_coords(DenseTensor const &raw, std::span<double const> col_min, std::span<double const> col_max)
{
  if (raw.order() != 2 || raw.dim(1) != 4 || col_min.size() != 4 || col_max.size() != 4) {
    throw ShapeError("normalize_coords expects (N, 4) coordinates and four column ranges");
  }
  DenseTensor out(raw.shape());
  for (Index i = 0; i < raw.dim(0); ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      Index const at = i * 4 + static_cast<Index>(j);
      double const span = col_max[j] - col_min[j];
      out[at] = span > 0.0 ? 2.0 * (raw[at] - col_min[j]) / span - 1.0 : 0.0;
    }
  }
  return out;
}

PointSet parse_pointcloud(std::string_view text)
{
  std::vector<double> coords, values;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto const nl = text.find('\n');
    auto line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') { line.remove_suffix(1); }

    std::vector<double> fields;
    std::size_t pos = 0;
    auto is_sep = [](char ch) { return ch == ',' || ch == ' ' || ch == '\t'; };
    while (pos < line.size()) {
      while (pos < line.size() && is_sep(line[pos])) { ++pos; }
      if (pos >= line.size()) { break; }
      if (fields.empty() && line[pos] == '#') { break; }
      auto end = pos;
      while (end < line.size() && !is_sep(line[end])) { ++end; }
      double v = 0.0;
      auto const tok = line.substr(pos, end - pos);
      auto const [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc{} || ptr != tok.data() + tok.size() || !std::isfinite(v)) {
        throw ParseError("line " + std::to_string(line_no) + ": '" + std::string(tok) + "' is not a finite number");
      }
      fields.push_back(v);
      pos = end;
    }
    if (fields.empty()) { continue; }
    if (fields.size() != 5) {
      throw ParseError("line " + std::to_string(line_no) + ": expected 5 columns (x y z c s), found " +
                       std::to_string(fields.size()));
    }
    coords.insert(coords.end(), fields.begin(), fields.begin() + 4);
    values.push_back(fields[4]);
  }
  if (values.empty()) { throw ParseError("point cloud has no records"); }

  Index const n = static_cast<Index>(values.size());
  PointSet ps;
  ps.col_min.assign(4, std::numeric_limits<double>::infinity());
  ps.col_max.assign(4, -std::numeric_limits<double>::infinity());
  for (Index i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      double const v = coords[static_cast<std::size_t>(i) * 4 + j];
      ps.col_min[j] = std::min(ps.col_min[j], v);
      ps.col_max[j] = std::max(ps.col_max[j], v);
    }
  }
  ps.coords = normalize_coords(DenseTensor({n, 4}, std::move(coords)), ps.col_min, ps.col_max);
  ps.values = DenseTensor({n}, std::move(values));
  return ps;
}

PointSet load_pointcloud(fs::path const &path)
{
  try {
    return parse_pointcloud(read_file(path));
  } catch (ParseError const &e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

DenseTensor denormalize_coords(PointSet const &points)
{
  DenseTensor out(points.coords.shape());
  for (Index i = 0; i < points.coords.dim(0); ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      Index const at = i * 4 + static_cast<Index>(j);
      double const lo = points.col_min[j], hi = points.col_max[j];
      out[at] = hi > lo ? lo + (points.coords[at] + 1.0) * 0.5 * (hi - lo) : lo;
    }
  }
  return out;
}

void save_pointcloud(PointSet const &points, DenseTensor const &values, fs::path const &path)
{
  if (values.size() != points.size()) {
    throw ShapeError("save_pointcloud: " + std::to_string(values.size()) + " values for " +
                     std::to_string(points.size()) + " points");
  }
  auto const raw = denormalize_coords(points);
  std::ostringstream os;
  os << std::setprecision(17);
  for (Index i = 0; i < points.size(); ++i) {
    for (Index j = 0; j < 4; ++j) { os << raw[i * 4 + j] << ' '; }
    os << values[i] << '\n';
  }
  write_file_atomic(path, os.str());
}

// ---- degradations ----

DenseTensor add_noise(DenseTensor const &x, double sd, std::uint64_t seed)
{
  if (!(sd >= 0.0)) { throw RangeError("noise standard deviation must be >= 0"); }
  DenseTensor out = x;
  if (sd == 0.0) { return out; }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double &v : out.data()) { v += sd * normal(rng); }
  return out;
}

DenseTensor bernoulli_mask(Shape const &shape, double sampling_ratio, std::uint64_t seed)
{
  if (!(sampling_ratio >= 0.0 && sampling_ratio <= 1.0)) { throw RangeError("sampling ratio must be in [0, 1]"); }
  DenseTensor mask(shape);
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(sampling_ratio);
  for (double &v : mask.data()) { v = keep(rng) ? 1.0 : 0.0; }
  return mask;
}

} // namespace reptrfd

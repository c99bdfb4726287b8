#include "stochpool/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace stochpool {

namespace {

constexpr char kModelMagic[4] = {'S', 'T', 'P', 'L'};
constexpr char kStateMagic[4] = {'S', 'T', 'P', 'S'};

class Writer {
 public:
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(std::string("truncated file while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }
  std::string raw(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
  std::string str(const char* what) { return raw(u32(what), what); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

void expect_magic(Reader& r, const char (&magic)[4]) {
  if (r.raw(4, "magic") != std::string(magic, 4)) {
    throw FormatError("bad magic: expected '" + std::string(magic, 4) + "'");
  }
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported format version " + std::to_string(version));
  }
}

void write_matrix_header(Writer& w, const std::string& name, const Matrix<double>& m) {
  w.str(name);
  w.u32(2);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
}

std::pair<std::string, std::pair<Eigen::Index, Eigen::Index>> read_matrix_header(Reader& r) {
  auto name = r.str("tensor name");
  const auto ndim = r.u32("ndim");
  if (ndim != 2) throw FormatError("tensor '" + name + "' has ndim " + std::to_string(ndim) + ", expected 2");
  const auto rows = static_cast<Eigen::Index>(r.u32("dims"));
  const auto cols = static_cast<Eigen::Index>(r.u32("dims"));
  return {std::move(name), {rows, cols}};
}

Matrix<double> read_f64_matrix(Reader& r, Eigen::Index rows, Eigen::Index cols) {
  r.need(static_cast<std::size_t>(rows * cols) * 8, "tensor data");
  Matrix<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64("tensor data");
  return m;
}

}  // namespace

std::string encode_checkpoint(const EncoderModel<double>& model) {
  Writer w;
  w.raw(kModelMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(model.config().serialize());
  const auto values = model.named_values();
  w.u32(static_cast<std::uint32_t>(values.size()));
  for (const auto& [name, m] : values) {
    write_matrix_header(w, name, m);
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f32(static_cast<float>(m.data()[i]));
  }
  return w.take();
}

EncoderModel<double> decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  expect_magic(r, kModelMagic);
  const auto config = EncoderConfig::deserialize(r.str("config"));
  const auto count = r.u32("tensor count");
  std::vector<std::pair<std::string, Matrix<double>>> values;
  for (std::uint32_t t = 0; t < count; ++t) {
    auto [name, shape] = read_matrix_header(r);
    r.need(static_cast<std::size_t>(shape.first * shape.second) * 4, "tensor data");
    Matrix<double> m(shape.first, shape.second);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(r.f32("tensor data"));
    values.emplace_back(std::move(name), std::move(m));
  }
  if (!r.done()) throw FormatError("trailing bytes after last tensor");
  try {
    return EncoderModel<double>(config, values);
  } catch (const DimensionError& e) {
    throw FormatError(std::string("checkpoint does not match its config: ") + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void save_checkpoint(const EncoderModel<double>& model, const std::filesystem::path& path) {
  write_file(path, encode_checkpoint(model));
}

EncoderModel<double> load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
}

void save_train_state(const TrainState& state, const std::filesystem::path& path) {
  if (state.adam_m.size() != state.params.size() || state.adam_v.size() != state.params.size()) {
    throw std::invalid_argument("train state: moment count does not match parameter count");
  }
  Writer w;
  w.raw(kStateMagic, 4);
  w.u32(kCheckpointVersion);
  w.str(state.config.serialize());
  w.u64(state.seed);
  w.u64(state.step);
  w.f64(state.initial_loss);
  w.u32(static_cast<std::uint32_t>(state.params.size()));
  for (std::size_t i = 0; i < state.params.size(); ++i) {
    const auto& [name, m] = state.params[i];
    write_matrix_header(w, name, m);
    for (const auto* mat : {&m, &state.adam_m[i], &state.adam_v[i]}) {
      for (Eigen::Index k = 0; k < mat->size(); ++k) w.f64(mat->data()[k]);
    }
  }
  w.f64(state.best_loss);
  w.u64(state.best_step);
  w.u32(static_cast<std::uint32_t>(state.best_params.size()));
  for (const auto& m : state.best_params) {
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.size(); ++k) w.f64(m.data()[k]);
  }
  write_file(path, w.take());
}

TrainState load_train_state(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Reader r(bytes);
  expect_magic(r, kStateMagic);
  TrainState s;
  s.config = EncoderConfig::deserialize(r.str("config"));
  s.seed = r.u64("seed");
  s.step = r.u64("step");
  s.initial_loss = r.f64("initial loss");
  const auto count = r.u32("tensor count");
  for (std::uint32_t t = 0; t < count; ++t) {
    auto [name, shape] = read_matrix_header(r);
    s.params.emplace_back(std::move(name), read_f64_matrix(r, shape.first, shape.second));
    s.adam_m.push_back(read_f64_matrix(r, shape.first, shape.second));
    s.adam_v.push_back(read_f64_matrix(r, shape.first, shape.second));
  }
  s.best_loss = r.f64("best loss");
  s.best_step = r.u64("best step");
  const auto best = r.u32("best count");
  for (std::uint32_t t = 0; t < best; ++t) {
    const auto rows = static_cast<Eigen::Index>(r.u32("dims"));
    const auto cols = static_cast<Eigen::Index>(r.u32("dims"));
    s.best_params.push_back(read_f64_matrix(r, rows, cols));
  }
  if (!r.done()) throw FormatError("'" + path.string() + "': trailing bytes");
  return s;
}

}  // namespace stochpool

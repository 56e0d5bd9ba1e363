#include "orpo/binary_io.hpp"

#include <fstream>
#include <sstream>

namespace orpo {

void ByteWriter::vector(const Vector& v) {
  put<std::uint32_t>(static_cast<std::uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) put<double>(v[i]);
}

void ByteWriter::matrix(const Matrix& m) {
  put<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
  put<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(m(r, c));
}

void ByteWriter::network(const MlpNetwork& net) {
  put<std::uint8_t>(static_cast<std::uint8_t>(net.activation()));
  put<std::uint32_t>(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    matrix(l.weight);
    vector(l.bias);
  }
}

std::string ByteReader::bytes(std::size_t n) {
  if (pos_ + n > data_.size()) throw FormatError("unexpected end of file");
  std::string s = data_.substr(pos_, n);
  pos_ += n;
  return s;
}

Vector ByteReader::vector() {
  Vector v(get<std::uint32_t>());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = get<double>();
  return v;
}

Matrix ByteReader::matrix() {
  const auto rows = get<std::uint32_t>();
  const auto cols = get<std::uint32_t>();
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>();
  return m;
}

MlpNetwork ByteReader::network() {
  const auto act = get<std::uint8_t>();
  if (act > 1) throw FormatError("unknown activation tag");
  const auto n = get<std::uint32_t>();
  if (n == 0) throw FormatError("network without layers");
  std::vector<int> sizes;
  std::vector<DenseLayer> layers;
  for (std::uint32_t l = 0; l < n; ++l) {
    DenseLayer layer{matrix(), vector()};
    if (layer.bias.size() != layer.weight.rows()) throw FormatError("layer bias size mismatch");
    if (l == 0) sizes.push_back(static_cast<int>(layer.weight.cols()));
    if (static_cast<int>(layer.weight.cols()) != sizes.back()) throw FormatError("layer size mismatch");
    sizes.push_back(static_cast<int>(layer.weight.rows()));
    layers.push_back(std::move(layer));
  }
  Rng scratch(0);
  MlpNetwork net(sizes, scratch, static_cast<Activation>(act));
  net.layers() = std::move(layers);
  return net;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

void write_header(ByteWriter& out, const char (&magic)[9], std::uint32_t version) {
  out.raw(std::string(magic, 8));
  out.put<std::uint32_t>(version);
}

void read_header(ByteReader& in, const char (&magic)[9], std::uint32_t version,
                 const std::string& what) {
  if (in.bytes(8) != std::string(magic, 8)) throw FormatError(what + ": bad magic (wrong file type)");
  const auto v = in.get<std::uint32_t>();
  if (v != version)
    throw FormatError(what + ": schema version " + std::to_string(v) + ", expected " +
                      std::to_string(version));
}

}  // namespace orpo

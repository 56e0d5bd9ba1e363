#include "orpo/datasets.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace orpo {

std::string to_string(BufferTag tag) {
  switch (tag) {
    case BufferTag::env: return "env";
    case BufferTag::opt_raw: return "opt_raw";
    case BufferTag::opt_relabel: return "opt_relabel";
    case BufferTag::pess: return "pess";
  }
  return "unknown";
}

namespace {
BufferTag tag_from_string(const std::string& s) {
  for (auto t : {BufferTag::env, BufferTag::opt_raw, BufferTag::opt_relabel, BufferTag::pess})
    if (to_string(t) == s) return t;
  throw FormatError("unknown buffer tag '" + s + "'");
}
}  // namespace

ReplayBuffer::ReplayBuffer(BufferTag tag, std::size_t capacity) : tag_(tag), capacity_(capacity) {
  if (capacity == 0) throw ValidationError("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::add(Transition t) {
  ++inserted_;
  if (records_.size() < capacity_) {
    records_.push_back(std::move(t));
    return;
  }
  records_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

void ReplayBuffer::add_all(const std::vector<Transition>& ts) {
  for (const auto& t : ts) add(t);
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= records_.size()) throw std::out_of_range("ReplayBuffer::at");
  return records_[(head_ + i) % records_.size()];
}

std::vector<Transition> ReplayBuffer::records() const {
  std::vector<Transition> out;
  out.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i));
  return out;
}

void MixSpec::validate() const {
  if (fractions.empty()) throw ValidationError("MixSpec: no fractions");
  if (batch_size == 0) throw ValidationError("MixSpec: batch size must be positive");
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ValidationError("MixSpec: fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("MixSpec: fractions must sum to 1");
}

std::vector<std::size_t> MixSpec::counts() const {
  validate();
  const std::size_t n = fractions.size();
  std::vector<std::size_t> out(n);
  std::vector<double> remainder(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = fractions[i] * static_cast<double>(batch_size);
    out[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[i] = exact - static_cast<double>(out[i]);
    assigned += out[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b] + 1e-12; });
  for (std::size_t k = 0; assigned < batch_size; ++k, ++assigned) ++out[order[k % n]];
  return out;
}

Batch make_batch(const std::vector<Transition>& records, BufferTag tag) {
  Batch b;
  if (records.empty()) return b;
  const auto n = static_cast<Eigen::Index>(records.size());
  const auto ds = records.front().state.size();
  const auto da = records.front().action.size();
  b.states.resize(n, ds);
  b.actions.resize(n, da);
  b.rewards.resize(n);
  b.next_states.resize(n, ds);
  b.terminals.resize(n);
  b.tags.assign(records.size(), tag);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = records[static_cast<std::size_t>(i)];
    b.states.row(i) = t.state.transpose();
    b.actions.row(i) = t.action.transpose();
    b.rewards[i] = t.reward;
    b.next_states.row(i) = t.next_state.transpose();
    b.terminals[i] = t.terminal ? 1.0 : 0.0;
  }
  return b;
}

Batch sample_mixed_batch(std::span<const ReplayBuffer* const> buffers, const MixSpec& mix, Rng& rng) {
  if (buffers.size() != mix.fractions.size())
    throw ValidationError("sample_mixed_batch: one fraction per buffer required");
  const auto counts = mix.counts();
  Batch b;
  Eigen::Index ds = -1, da = -1;
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    if (counts[i] == 0) continue;
    if (buffers[i] == nullptr || buffers[i]->empty())
      throw ValidationError("sample_mixed_batch: buffer " + std::to_string(i) + " (" +
                            (buffers[i] ? to_string(buffers[i]->tag()) : "null") +
                            ") is empty but has a positive fraction");
    ds = buffers[i]->at(0).state.size();
    da = buffers[i]->at(0).action.size();
  }
  const auto n = static_cast<Eigen::Index>(mix.batch_size);
  b.states.resize(n, ds);
  b.actions.resize(n, da);
  b.rewards.resize(n);
  b.next_states.resize(n, ds);
  b.terminals.resize(n);
  b.tags.reserve(mix.batch_size);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    for (std::size_t k = 0; k < counts[i]; ++k, ++row) {
      const auto& t = buffers[i]->at(rng.index(buffers[i]->size()));
      b.states.row(row) = t.state.transpose();
      b.actions.row(row) = t.action.transpose();
      b.rewards[row] = t.reward;
      b.next_states.row(row) = t.next_state.transpose();
      b.terminals[row] = t.terminal ? 1.0 : 0.0;
      b.tags.push_back(buffers[i]->tag());
    }
  }
  return b;
}

Transition relabel_record(const Transition& t, const RewardShaper& shaper) {
  if (!t.from_model()) throw ValidationError("relabel: record lacks raw reward or uncertainty");
  Transition out = t;
  out.reward = shape_reward(*t.raw_reward, *t.uncertainty, ShapingMode::pessimistic, shaper);
  return out;
}

ReplayBuffer relabel(const ReplayBuffer& opt_raw, const RewardShaper& shaper) {
  ReplayBuffer out(BufferTag::opt_relabel, opt_raw.capacity());
  for (std::size_t i = 0; i < opt_raw.size(); ++i) out.add(relabel_record(opt_raw.at(i), shaper));
  return out;
}

// ---- binary I/O -------------------------------------------------------------

namespace {

constexpr char kMagic[9] = "ORPORBUF";

std::pair<Eigen::Index, Eigen::Index> dims_of(const ReplayBuffer& buffer) {
  if (buffer.empty()) return {0, 0};
  return {buffer.at(0).state.size(), buffer.at(0).action.size()};
}

}  // namespace

void save(const ReplayBuffer& buffer, const std::filesystem::path& path) {
  const auto [ds, da] = dims_of(buffer);
  ByteWriter out;
  write_header(out, kMagic, kBufferFormatVersion);
  out.put<std::uint8_t>(static_cast<std::uint8_t>(buffer.tag()));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(ds));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(da));
  out.put<std::uint64_t>(static_cast<std::uint64_t>(buffer.capacity()));
  out.put<std::uint64_t>(static_cast<std::uint64_t>(buffer.size()));
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const auto& t = buffer.at(i);
    ByteWriter rec;
    for (Eigen::Index j = 0; j < ds; ++j) rec.put<double>(t.state[j]);
    for (Eigen::Index j = 0; j < da; ++j) rec.put<double>(t.action[j]);
    rec.put<double>(t.reward);
    for (Eigen::Index j = 0; j < ds; ++j) rec.put<double>(t.next_state[j]);
    const std::uint8_t flags = (t.terminal ? 1 : 0) | (t.raw_reward ? 2 : 0) | (t.uncertainty ? 4 : 0);
    rec.put<std::uint8_t>(flags);
    if (t.raw_reward) rec.put<double>(*t.raw_reward);
    if (t.uncertainty) rec.put<double>(*t.uncertainty);
    out.put<std::uint32_t>(static_cast<std::uint32_t>(rec.data().size()));
    out.raw(rec.data());
  }
  write_file(path, out.data());
}

ReplayBuffer load(const std::filesystem::path& path) {
  ByteReader in(read_file(path));
  read_header(in, kMagic, kBufferFormatVersion, path.string());
  const auto tag = in.get<std::uint8_t>();
  if (tag > 3) throw FormatError(path.string() + ": bad buffer tag");
  const auto ds = in.get<std::uint32_t>();
  const auto da = in.get<std::uint32_t>();
  const auto capacity = in.get<std::uint64_t>();
  const auto count = in.get<std::uint64_t>();
  ReplayBuffer buffer(static_cast<BufferTag>(tag), static_cast<std::size_t>(capacity));
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = in.get<std::uint32_t>();
    const std::size_t start = in.position();
    Transition t;
    t.state.resize(ds);
    t.action.resize(da);
    t.next_state.resize(ds);
    for (std::uint32_t j = 0; j < ds; ++j) t.state[j] = in.get<double>();
    for (std::uint32_t j = 0; j < da; ++j) t.action[j] = in.get<double>();
    t.reward = in.get<double>();
    for (std::uint32_t j = 0; j < ds; ++j) t.next_state[j] = in.get<double>();
    const auto flags = in.get<std::uint8_t>();
    t.terminal = flags & 1;
    if (flags & 2) t.raw_reward = in.get<double>();
    if (flags & 4) t.uncertainty = in.get<double>();
    if (in.position() - start != len) throw FormatError(path.string() + ": record length mismatch");
    buffer.add(std::move(t));
  }
  return buffer;
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string vec17(const Vector& v) {
  std::string s = "[";
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    s += fmt17(v[i]);
  }
  return s + "]";
}

Vector vec_from(const nlohmann::json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

}  // namespace

void export_jsonl(const ReplayBuffer& buffer, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::ios_base::failure("cannot write " + path.string());
  out << "{\"format\":\"orpo-rbuf-jsonl\",\"version\":" << kBufferFormatVersion << ",\"tag\":\""
      << to_string(buffer.tag()) << "\",\"capacity\":" << buffer.capacity() << "}\n";
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const auto& t = buffer.at(i);
    out << "{\"s\":" << vec17(t.state) << ",\"a\":" << vec17(t.action) << ",\"r\":" << fmt17(t.reward)
        << ",\"s_next\":" << vec17(t.next_state) << ",\"terminal\":" << (t.terminal ? "true" : "false");
    if (t.raw_reward) out << ",\"r_raw\":" << fmt17(*t.raw_reward);
    if (t.uncertainty) out << ",\"u\":" << fmt17(*t.uncertainty);
    out << "}\n";
  }
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

ReplayBuffer import_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  const auto header = nlohmann::json::parse(line);
  if (header.value("format", "") != "orpo-rbuf-jsonl")
    throw FormatError(path.string() + ": not an orpo JSON-lines buffer");
  if (header.value("version", 0u) != kBufferFormatVersion)
    throw FormatError(path.string() + ": unsupported format version");
  ReplayBuffer buffer(tag_from_string(header.at("tag").get<std::string>()),
                      header.at("capacity").get<std::size_t>());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    Transition t;
    t.state = vec_from(j.at("s"));
    t.action = vec_from(j.at("a"));
    t.reward = j.at("r").get<double>();
    t.next_state = vec_from(j.at("s_next"));
    t.terminal = j.at("terminal").get<bool>();
    if (j.contains("r_raw")) t.raw_reward = j["r_raw"].get<double>();
    if (j.contains("u")) t.uncertainty = j["u"].get<double>();
    buffer.add(std::move(t));
  }
  return buffer;
}

}  // namespace orpo

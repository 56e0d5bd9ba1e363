#pragma once

#include "orpo/binary_io.hpp"
#include "orpo/envs.hpp"
#include "orpo/reward_shaper.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace orpo {

// env = D_env, opt_raw = Dᵒ_{πᵒ} (O-MDP rewards), opt_relabel = Dᵖ_{πᵒ}
// (same tuples, P-MDP rewards), pess = Dᵖ_{πᵖ}.
enum class BufferTag : std::uint8_t { env = 0, opt_raw = 1, opt_relabel = 2, pess = 3 };

std::string to_string(BufferTag tag);

inline constexpr std::size_t kModelBufferCapacity = 1'000'000;
inline constexpr std::size_t kUnbounded = static_cast<std::size_t>(-1);

// Bounded FIFO ring of transitions. Index 0 is always the oldest record.
class ReplayBuffer {
 public:
  ReplayBuffer(BufferTag tag, std::size_t capacity);

  void add(Transition t);
  void add_all(const std::vector<Transition>& ts);

  BufferTag tag() const { return tag_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  std::size_t capacity() const { return capacity_; }
  std::size_t inserted() const { return inserted_; }
  const Transition& at(std::size_t i) const;
  std::vector<Transition> records() const;

 private:
  BufferTag tag_;
  std::size_t capacity_;
  std::size_t inserted_ = 0;
  std::size_t head_ = 0;  // position of the oldest record once full
  std::vector<Transition> records_;
};

struct MixSpec {
  std::vector<double> fractions;
  std::size_t batch_size = 256;

  void validate() const;
  // Largest-remainder rounding of fractions·batch_size; ties go to the lower
  // buffer index.
  std::vector<std::size_t> counts() const;
};

// Column-stacked training batch.
struct Batch {
  Matrix states;       // B x ds
  Matrix actions;      // B x da
  Vector rewards;      // B
  Matrix next_states;  // B x ds
  Vector terminals;    // B, 1.0 for terminal
  std::vector<BufferTag> tags;

  std::size_t size() const { return static_cast<std::size_t>(states.rows()); }
};

Batch make_batch(const std::vector<Transition>& records, BufferTag tag);

// Uniform sampling with replacement inside each buffer, counts per MixSpec.
Batch sample_mixed_batch(std::span<const ReplayBuffer* const> buffers, const MixSpec& mix, Rng& rng);

// rᵖ = r_raw − λᵖu on a single model record.
Transition relabel_record(const Transition& t, const RewardShaper& shaper);
ReplayBuffer relabel(const ReplayBuffer& opt_raw, const RewardShaper& shaper);

inline constexpr std::uint32_t kBufferFormatVersion = 1;

// Binary .rbuf: magic "ORPORBUF", u32 version, u8 tag, u32 state dim, u32
// action dim, u64 capacity, u64 count, then count length-prefixed records.
// All integers and reals little-endian.
void save(const ReplayBuffer& buffer, const std::filesystem::path& path);
ReplayBuffer load(const std::filesystem::path& path);

// JSON lines: a header object, then one object per record with reals printed
// to 17 significant digits.
void export_jsonl(const ReplayBuffer& buffer, const std::filesystem::path& path);
ReplayBuffer import_jsonl(const std::filesystem::path& path);

}  // namespace orpo

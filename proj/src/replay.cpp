#include "pitod/replay.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

#include "pitod/csv.hpp"
#include "pitod/mask.hpp"

namespace pitod {

namespace {

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

std::vector<std::size_t> sample_indices(std::size_t pool, std::size_t batch, Rng& rng) {
  if (pool == 0) throw std::invalid_argument("sample: empty pool");
  std::vector<std::size_t> out(batch);
  for (auto& i : out) i = static_cast<std::size_t>(rng.uniform_index(pool));
  return out;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t group_size)
    : capacity_(capacity), group_size_(group_size) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  if (group_size == 0) throw std::invalid_argument("group_size must be positive");
}

void ReplayBuffer::push(Experience e) {
  if (storage_.size() >= capacity_) throw std::length_error("replay buffer capacity exceeded");
  if (!std::isfinite(e.reward) || !all_finite(e.state) || !all_finite(e.action) ||
      !all_finite(e.next_state))
    throw std::invalid_argument("replay: non-finite experience");
  e.group_id = group_id_of(storage_.size(), group_size_);
  storage_.push_back(std::move(e));
}

std::span<const Experience> ReplayBuffer::group(std::uint64_t group_id) const {
  const std::uint64_t begin = group_id * group_size_;
  if (begin >= storage_.size()) return {};
  const std::uint64_t end = std::min<std::uint64_t>(begin + group_size_, storage_.size());
  return std::span<const Experience>(storage_).subspan(begin, end - begin);
}

std::uint64_t ReplayBuffer::group_count() const {
  return (storage_.size() + group_size_ - 1) / group_size_;
}

std::vector<Experience> ReplayBuffer::sample_minibatch(std::size_t batch_size,
                                                       std::uint64_t rng_seed) const {
  if (storage_.empty()) throw std::invalid_argument("sample_minibatch: empty buffer");
  if (batch_size == 0 || batch_size > kMaxBatchSize)
    throw std::invalid_argument("sample_minibatch: batch size outside [1, 65536]");
  if (batch_size > storage_.size())
    throw std::invalid_argument("sample_minibatch: batch larger than buffer");
  Rng rng(rng_seed);
  std::vector<Experience> out;
  out.reserve(batch_size);
  for (std::size_t i : sample_indices(storage_.size(), batch_size, rng)) out.push_back(storage_[i]);
  return out;
}

std::vector<GroupInfo> ReplayBuffer::groups() const {
  std::vector<GroupInfo> out;
  for (const auto& e : storage_) {
    if (out.empty() || out.back().group_id != e.group_id) out.push_back({e.group_id, 0});
    ++out.back().size;
  }
  return out;
}

void ReplayBuffer::export_csv(const std::filesystem::path& path) const {
  const std::size_t sd = storage_.empty() ? 0 : storage_.front().state.size();
  const std::size_t ad = storage_.empty() ? 0 : storage_.front().action.size();
  std::vector<std::string> header = {"index", "group_id", "poisoned", "done", "reward"};
  for (std::size_t k = 0; k < sd; ++k) header.push_back("s" + std::to_string(k));
  for (std::size_t k = 0; k < ad; ++k) header.push_back("a" + std::to_string(k));
  for (std::size_t k = 0; k < sd; ++k) header.push_back("ns" + std::to_string(k));
  CsvWriter w(header);
  w.comment("pitod-replay v1 capacity=" + std::to_string(capacity_) +
            " group_size=" + std::to_string(group_size_));
  for (std::size_t i = 0; i < storage_.size(); ++i) {
    const auto& e = storage_[i];
    w.cell(static_cast<std::uint64_t>(i)).cell(e.group_id).cell(e.poisoned).cell(e.done).cell(e.reward);
    for (double v : e.state) w.cell(v);
    for (double v : e.action) w.cell(v);
    for (double v : e.next_state) w.cell(v);
    w.end_row();
  }
  w.save(path);
}

ReplayBuffer ReplayBuffer::import_csv(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  std::size_t capacity = 0;
  std::uint64_t group_size = 0;
  for (const auto& c : t.comments) {
    std::istringstream ss(c);
    std::string tag, version, cap, gs;
    ss >> tag >> version >> cap >> gs;
    if (tag != "pitod-replay") continue;
    if (version != "v1") throw std::runtime_error("unsupported replay format " + version);
    capacity = static_cast<std::size_t>(parse_int(cap.substr(cap.find('=') + 1)));
    group_size = static_cast<std::uint64_t>(parse_int(gs.substr(gs.find('=') + 1)));
  }
  if (capacity == 0 || group_size == 0) throw std::runtime_error(path.string() + ": missing pitod-replay header");
  std::size_t sd = 0, ad = 0;
  for (const auto& h : t.header) {
    if (h.rfind("ns", 0) == 0) continue;
    if (h.size() > 1 && h[0] == 's' && std::isdigit(static_cast<unsigned char>(h[1]))) ++sd;
    if (h.size() > 1 && h[0] == 'a' && std::isdigit(static_cast<unsigned char>(h[1]))) ++ad;
  }
  ReplayBuffer buf(capacity, group_size);
  const std::size_t base = 5;
  for (const auto& row : t.rows) {
    Experience e;
    e.poisoned = parse_int(row[2]) != 0;
    e.done = parse_int(row[3]) != 0;
    e.reward = parse_double(row[4]);
    for (std::size_t k = 0; k < sd; ++k) e.state.push_back(parse_double(row[base + k]));
    for (std::size_t k = 0; k < ad; ++k) e.action.push_back(parse_double(row[base + sd + k]));
    for (std::size_t k = 0; k < sd; ++k) e.next_state.push_back(parse_double(row[base + sd + ad + k]));
    const auto expected_group = static_cast<std::uint64_t>(parse_int(row[1]));
    buf.push(std::move(e));
    if (buf.storage_.back().group_id != expected_group)
      throw std::runtime_error(path.string() + ": group_id inconsistent with insertion index");
  }
  return buf;
}

}  // namespace pitod

#include "pitod/checkpoint.hpp"

#include <cstring>
#include <stdexcept>

#include "pitod/csv.hpp"

namespace pitod {

namespace {

constexpr char kMagic[8] = {'P', 'I', 'T', 'O', 'D', 'C', 'K', 'P'};
constexpr char kTrailer[4] = {'E', 'N', 'D', '.'};

class Writer {
 public:
  template <class T>
  void put(const T& v) {
    const char* p = reinterpret_cast<const char*>(&v);
    out_.append(p, sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <class T>
  T get() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  void bytes(void* p, std::size_t n) {
    if (n > data_.size() - pos_) throw std::runtime_error("checkpoint: truncated file");
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

void put_net(Writer& w, const EnsembleApproximator& net) {
  const EnsembleShape& s = net.shape();
  w.put<std::int32_t>(s.members);
  w.put<std::int32_t>(s.input_dim);
  w.put<std::int32_t>(s.output_dim);
  w.put<std::int32_t>(s.hidden);
  w.put<std::uint64_t>(net.param_count());
  w.bytes(net.params().data(), net.param_count() * sizeof(double));
}

EnsembleApproximator get_net(Reader& r) {
  EnsembleShape s;
  s.members = r.get<std::int32_t>();
  s.input_dim = r.get<std::int32_t>();
  s.output_dim = r.get<std::int32_t>();
  s.hidden = r.get<std::int32_t>();
  if (s.members < 1 || s.input_dim < 1 || s.output_dim < 1 || s.hidden < 2 || s.members > 4096 ||
      s.input_dim > 1 << 20 || s.output_dim > 1 << 20 || s.hidden > 1 << 16)
    throw std::runtime_error("checkpoint: implausible network shape");
  EnsembleApproximator net(s, 0);
  const auto count = r.get<std::uint64_t>();
  if (count != net.param_count()) throw std::runtime_error("checkpoint: parameter count does not match shape");
  r.bytes(net.params().data(), count * sizeof(double));
  return net;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(ck.config_json.size());
  w.bytes(ck.config_json.data(), ck.config_json.size());
  w.put<std::uint64_t>(ck.mask.master_seed);
  w.put<std::int32_t>(ck.mask.ensemble_size);
  w.put<double>(ck.mask.dropout_rate);
  w.put<std::uint64_t>(ck.mask.group_size);
  w.put<std::uint64_t>(ck.epoch);
  w.put<std::uint64_t>(ck.total_steps);
  w.put<std::uint64_t>(ck.agent.update_count);
  w.put<double>(ck.agent.alpha);
  w.put<double>(ck.agent.log_alpha);
  w.put<double>(ck.agent.gamma);
  put_net(w, ck.agent.policy);
  put_net(w, ck.agent.q1.online);
  put_net(w, ck.agent.q2.online);
  put_net(w, ck.agent.q1.target);
  put_net(w, ck.agent.q2.target);
  w.bytes(kTrailer, sizeof kTrailer);
  atomic_write(path, w.str());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(read_file(path));
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw std::runtime_error("checkpoint: not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  const auto n = r.get<std::uint64_t>();
  if (n > r.remaining()) throw std::runtime_error("checkpoint: truncated file");
  ck.config_json.resize(n);
  r.bytes(ck.config_json.data(), n);
  ck.mask.master_seed = r.get<std::uint64_t>();
  ck.mask.ensemble_size = r.get<std::int32_t>();
  ck.mask.dropout_rate = r.get<double>();
  ck.mask.group_size = r.get<std::uint64_t>();
  ck.epoch = r.get<std::uint64_t>();
  ck.total_steps = r.get<std::uint64_t>();
  ck.agent.update_count = r.get<std::uint64_t>();
  ck.agent.alpha = r.get<double>();
  ck.agent.log_alpha = r.get<double>();
  ck.agent.gamma = r.get<double>();
  ck.agent.policy = get_net(r);
  EnsembleApproximator q1 = get_net(r), q2 = get_net(r), q1t = get_net(r), q2t = get_net(r);
  ck.agent.q1 = TargetPair{std::move(q1), std::move(q1t)};
  ck.agent.q2 = TargetPair{std::move(q2), std::move(q2t)};
  char trailer[4];
  r.bytes(trailer, sizeof trailer);
  if (std::memcmp(trailer, kTrailer, sizeof trailer) != 0 || r.remaining() != 0)
    throw std::runtime_error("checkpoint: corrupt trailer");
  return ck;
}

}  // namespace pitod

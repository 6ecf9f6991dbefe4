#include "f2bev/params.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace f2bev::dc {
namespace {

constexpr char kMagic[] = "F2BEVCKPT1";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename U>
void write_pod(std::ostream& out, U value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(U));
}

template <typename U>
U read_pod(std::istream& in, const std::string& where) {
    U value{};
    in.read(reinterpret_cast<char*>(&value), sizeof(U));
    if (!in) throw ParseError("checkpoint truncated while reading " + where);
    return value;
}

template <typename T>
constexpr std::uint8_t dtype_code() {
    return std::is_same_v<T, float> ? 0 : 1;
}

}  // namespace

template <typename T>
Tensor<T> ParamStore<T>::add(const std::string& name, Shape shape, std::vector<T> values) {
    if (index_.contains(name)) throw PreconditionError("duplicate parameter name '" + name + "'");
    Tensor<T> t(std::move(shape), std::move(values), true);
    index_.emplace(name, params_.size());
    params_.push_back({name, t});
    return t;
}

template <typename T>
const Tensor<T>& ParamStore<T>::get(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw PreconditionError("unknown parameter '" + name + "'");
    return params_[it->second].tensor;
}

template <typename T>
std::size_t ParamStore<T>::total_elements() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
void ParamStore<T>::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kMagic, kMagicLen);
    for (const auto& p : params_) {
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_pod<std::uint8_t>(out, dtype_code<T>());
        write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p.tensor.rank()));
        for (auto d : p.tensor.shape()) write_pod<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(p.tensor.data().data()),
                  static_cast<std::streamsize>(p.tensor.numel() * sizeof(T)));
    }
    if (!out) throw IoError("checkpoint write failed: " + path.string());
}

template <typename T>
void ParamStore<T>::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    char magic[kMagicLen];
    in.read(magic, kMagicLen);
    if (!in || std::memcmp(magic, kMagic, kMagicLen) != 0) {
        throw ParseError(path.string() + ": not a checkpoint (bad magic)");
    }
    std::vector<bool> seen(params_.size(), false);
    while (in.peek() != std::char_traits<char>::eof()) {
        const auto len = read_pod<std::uint32_t>(in, "name length");
        std::string name(len, '\0');
        in.read(name.data(), len);
        if (!in) throw ParseError("checkpoint truncated in parameter name");
        const auto dtype = read_pod<std::uint8_t>(in, name + " dtype");
        if (dtype > 1) throw ParseError("checkpoint: unknown dtype for " + name);
        const auto rank = read_pod<std::uint32_t>(in, name + " rank");
        Shape shape;
        for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(read_pod<std::uint64_t>(in, name + " dims"));
        const auto it = index_.find(name);
        if (it == index_.end()) throw ParseError("checkpoint has unknown parameter '" + name + "'");
        Tensor<T>& t = params_[it->second].tensor;
        if (t.shape() != shape) {
            throw ParseError("checkpoint shape mismatch for '" + name + "': " + to_string(shape) +
                             " vs model " + to_string(t.shape()));
        }
        auto dst = t.data();
        if (dtype == 0) {
            std::vector<float> buf(dst.size());
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
            for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = static_cast<T>(buf[i]);
        } else {
            std::vector<double> buf(dst.size());
            in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(double)));
            for (std::size_t i = 0; i < buf.size(); ++i) dst[i] = static_cast<T>(buf[i]);
        }
        if (!in) throw ParseError("checkpoint truncated in values of " + name);
        seen[it->second] = true;
    }
    for (std::size_t i = 0; i < seen.size(); ++i) {
        if (!seen[i]) throw ParseError("checkpoint is missing parameter '" + params_[i].name + "'");
    }
}

template <typename T>
std::vector<T> kaiming_uniform(std::size_t count, std::size_t fan_in, double gain, Rng& rng) {
    const double bound = gain * std::sqrt(3.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<T> out(count);
    for (auto& v : out) v = static_cast<T>(dist(rng));
    return out;
}

template <typename T>
std::vector<T> normal_init(std::size_t count, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<T> out(count);
    for (auto& v : out) v = static_cast<T>(dist(rng));
    return out;
}

template <typename T>
SgdMomentum<T>::SgdMomentum(ParamStore<T>& store, SgdConfig<T> config)
    : store_(&store), config_(config) {
    for (const auto& p : store.params()) velocity_.emplace_back(p.tensor.numel(), T(0));
}

template <typename T>
T SgdMomentum<T>::step() {
    auto& params = store_->params();
    double sq = 0.0;
    for (const auto& p : params) {
        for (T g : p.tensor.grad()) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    double factor = 1.0;
    if (config_.clip_norm > T(0) && norm > config_.clip_norm) factor = config_.clip_norm / norm;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor<T> t = params[k].tensor;
        if (!t.has_grad()) continue;
        auto w = t.data();
        auto g = t.grad();
        auto& v = velocity_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = config_.momentum * v[i] + static_cast<T>(factor) * g[i];
            w[i] -= config_.learning_rate * v[i];
        }
        t.zero_grad();
    }
    return static_cast<T>(norm);
}

template class ParamStore<float>;
template class ParamStore<double>;
template class SgdMomentum<float>;
template class SgdMomentum<double>;
template std::vector<float> kaiming_uniform<float>(std::size_t, std::size_t, double, Rng&);
template std::vector<double> kaiming_uniform<double>(std::size_t, std::size_t, double, Rng&);
template std::vector<float> normal_init<float>(std::size_t, double, Rng&);
template std::vector<double> normal_init<double>(std::size_t, double, Rng&);

}  // namespace f2bev::dc

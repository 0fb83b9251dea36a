#include "cvnn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "binary_io.hpp"

namespace cvnn {

namespace {

constexpr char kCkptMagic[8] = {'C', 'V', 'N', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

void check_grads(const ParamSet& params, const ParamGrads& grads, const char* op) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(grads.size()) +
                                " gradients for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].empty()) {
      throw std::invalid_argument(std::string(op) + ": missing gradient for '" + params[i].name + "'");
    }
    if (grads[i].shape() != params[i].value.shape()) {
      throw ShapeError(std::string(op) + ": gradient shape " + shape_str(grads[i].shape()) +
                       " does not match parameter '" + params[i].name + "' " +
                       shape_str(params[i].value.shape()));
    }
  }
}

}  // namespace

std::size_t ParamSet::add(std::string name, ComplexTensor value, bool real_only) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  params_.push_back({std::move(name), std::move(value), real_only});
  return params_.size() - 1;
}

const Parameter* ParamSet::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter* ParamSet::find(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

ParamGrads collect_grads(const GradStore& store, const std::vector<Var>& leaves) {
  ParamGrads out;
  out.reserve(leaves.size());
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    if (!store.contains(leaves[i])) {
      throw std::invalid_argument("missing gradient for parameter " + std::to_string(i));
    }
    out.push_back(store[leaves[i]]);
  }
  return out;
}

OptimKind parse_optim_kind(std::string_view name) {
  if (name == "sgd") return OptimKind::sgd;
  if (name == "adam") return OptimKind::adam;
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "' (expected sgd|adam)");
}

void sgd_step(ParamSet& params, const ParamGrads& grads, OptimState& st) {
  check_grads(params, grads, "sgd_step");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].value;
    for (std::size_t i = 0; i < p.size(); ++i) {
      p.re()[i] -= st.lr * grads[k].re()[i];
      p.im()[i] -= st.lr * grads[k].im()[i];
    }
  }
  ++st.step;
}

void adam_step(ParamSet& params, const ParamGrads& grads, OptimState& st) {
  check_grads(params, grads, "adam_step");
  if (st.m.empty()) {
    for (const auto& p : params) {
      st.m.push_back(ComplexTensor::zeros(p.value.shape()));
      st.v.push_back(ComplexTensor::zeros(p.value.shape()));
    }
  }
  if (st.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: optimizer state belongs to a different parameter set");
  }
  ++st.step;
  const double t = static_cast<double>(st.step);
  const double c1 = 1.0 - std::pow(st.beta1, t);
  const double c2 = 1.0 - std::pow(st.beta2, t);
  auto update = [&](std::span<double> p, std::span<const double> g, std::span<double> m,
                    std::span<double> v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      p[i] -= st.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.eps);
    }
  };
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k].value;
    update(p.re(), grads[k].re(), st.m[k].re(), st.v[k].re());
    update(p.im(), grads[k].im(), st.m[k].im(), st.v[k].im());
  }
}

void optimizer_step(ParamSet& params, ParamGrads grads, OptimState& st) {
  if (st.clip_norm) clip_grad_norm(grads, *st.clip_norm);
  if (st.kind == OptimKind::sgd) {
    sgd_step(params, grads, st);
  } else {
    adam_step(params, grads, st);
  }
}

double global_grad_norm(const ParamGrads& grads) {
  double s = 0.0;
  for (const auto& g : grads) {
    for (double v : g.re()) s += v * v;
    for (double v : g.im()) s += v * v;
  }
  return std::sqrt(s);
}

double clip_grad_norm(ParamGrads& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be > 0");
  const double norm = global_grad_norm(grads);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) {
      for (auto& v : g.re()) v *= s;
      for (auto& v : g.im()) v *= s;
    }
  }
  return norm;
}

void write_checkpoint(std::ostream& os, const NamedTensors& records) {
  os.write(kCkptMagic, sizeof kCkptMagic);
  detail::write_u32_le(os, kCkptVersion);
  for (const auto& [name, t] : records) {
    detail::write_u32_le(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, t);
  }
  if (!os) throw FormatError("checkpoint: write failed");
}

NamedTensors read_checkpoint(std::istream& is) {
  char magic[8];
  detail::read_exact(is, magic, sizeof magic, "checkpoint magic");
  if (!std::equal(magic, magic + 8, kCkptMagic)) throw FormatError("checkpoint: bad magic");
  const auto version = detail::read_u32_le(is, "checkpoint version");
  if (version != kCkptVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  NamedTensors out;
  // Records run to the end of the stream.
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = detail::read_u32_le(is, "checkpoint name length");
    if (len > 4096) throw FormatError("checkpoint: implausible name length");
    std::string name(len, '\0');
    detail::read_exact(is, name.data(), len, "checkpoint name");
    out.emplace_back(std::move(name), read_tensor(is));
  }
  return out;
}

void save_checkpoint(const std::string& path, const NamedTensors& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("checkpoint: cannot open '" + path + "' for writing");
  write_checkpoint(os, records);
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("checkpoint: cannot open '" + path + "'");
  return read_checkpoint(is);
}

NamedTensors optimizer_records(const OptimState& st, const ParamSet& params) {
  NamedTensors out;
  out.emplace_back("optim.step", ComplexTensor::scalar(static_cast<double>(st.step)));
  out.emplace_back("optim.hyper",
                   ComplexTensor({6},
                                 {st.kind == OptimKind::adam ? 1.0 : 0.0, st.lr, st.beta1,
                                  st.beta2, st.eps, st.clip_norm.value_or(0.0)},
                                 std::vector<double>(6, 0.0)));
  for (std::size_t k = 0; k < st.m.size(); ++k) {
    out.emplace_back("optim.m." + params[k].name, st.m[k]);
    out.emplace_back("optim.v." + params[k].name, st.v[k]);
  }
  return out;
}

void restore_optimizer(OptimState& st, const ParamSet& params, const NamedTensors& records) {
  std::map<std::string_view, const ComplexTensor*> by_name;
  for (const auto& [n, t] : records) by_name[n] = &t;
  auto need = [&](const std::string& n) -> const ComplexTensor& {
    auto it = by_name.find(n);
    if (it == by_name.end()) throw FormatError("checkpoint: missing record '" + n + "'");
    return *it->second;
  };
  const auto& step = need("optim.step");
  const auto& hyper = need("optim.hyper");
  if (step.size() != 1 || hyper.size() != 6) throw FormatError("checkpoint: bad optimizer header");
  st.step = static_cast<std::size_t>(step.re()[0]);
  st.kind = hyper.re()[0] == 1.0 ? OptimKind::adam : OptimKind::sgd;
  st.lr = hyper.re()[1];
  st.beta1 = hyper.re()[2];
  st.beta2 = hyper.re()[3];
  st.eps = hyper.re()[4];
  st.clip_norm.reset();
  if (hyper.re()[5] > 0.0) st.clip_norm = hyper.re()[5];
  st.m.clear();
  st.v.clear();
  if (!by_name.contains("optim.m." + (params.size() ? params[0].name : std::string()))) return;
  for (const auto& p : params) {
    const auto& m = need("optim.m." + p.name);
    const auto& v = need("optim.v." + p.name);
    if (m.shape() != p.value.shape() || v.shape() != p.value.shape()) {
      throw FormatError("checkpoint: moment shape mismatch for '" + p.name + "'");
    }
    st.m.push_back(m);
    st.v.push_back(v);
  }
}

}  // namespace cvnn

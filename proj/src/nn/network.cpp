#include "ndet/nn/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace ndet {

namespace {
constexpr char kNetMagic[4] = {'N', 'D', 'N', 'N'};
constexpr std::uint16_t kNetVersion = 1;
}  // namespace

void Network::add(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
}

Tensor Network::forward(const Tensor& x, bool training) {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i]->forward(h, training, rng_);
    if (!h.finite())
      throw NumericError(strf("non-finite value after layer %zu (%s)", i,
                              layers_[i]->describe().c_str()));
  }
  return h;
}

Tensor Network::backward(const Tensor& dloss) {
  Tensor g = dloss;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i]->backward(g);
    if (!g.finite())
      throw NumericError(strf("non-finite gradient below layer %zu (%s)", i,
                              layers_[i]->describe().c_str()));
  }
  return g;
}

std::vector<Tensor*> Network::params() {
  std::vector<Tensor*> out;
  for (auto& l : layers_)
    for (Tensor* p : l->params()) out.push_back(p);
  return out;
}

std::vector<Tensor*> Network::grads() {
  std::vector<Tensor*> out;
  for (auto& l : layers_)
    for (Tensor* g : l->grads()) out.push_back(g);
  return out;
}

void Network::zero_grads() {
  for (Tensor* g : grads()) g->fill(0.0);
}

void Network::scale_grads(double s) {
  for (Tensor* g : grads())
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] *= s;
}

double Network::clip_recurrent_grads(double max_norm) {
  double worst = 0.0;
  if (max_norm <= 0.0) return worst;
  for (auto& l : layers_) {
    if (!l->recurrent()) continue;
    double sq = 0.0;
    for (Tensor* g : l->grads())
      for (std::size_t i = 0; i < g->size(); ++i) sq += (*g)[i] * (*g)[i];
    const double norm = std::sqrt(sq);
    worst = std::max(worst, norm);
    if (norm > max_norm) {
      const double s = max_norm / norm;
      for (Tensor* g : l->grads())
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] *= s;
    }
  }
  return worst;
}

std::size_t Network::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_)
    for (Tensor* p : const_cast<Layer&>(*l).params()) n += p->size();
  return n;
}

std::vector<std::vector<std::size_t>> Network::probe(
    const std::vector<std::size_t>& input_shape) const {
  std::vector<std::vector<std::size_t>> shapes;
  std::vector<std::size_t> cur = input_shape;
  for (const auto& l : layers_) {
    cur = l->output_shape(cur);
    shapes.push_back(cur);
  }
  return shapes;
}

std::string Network::summary(const std::vector<std::size_t>& input_shape) const {
  std::string out = strf("input %s\n", shape_string(input_shape).c_str());
  std::vector<std::size_t> cur = input_shape;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    cur = layers_[i]->output_shape(cur);
    std::size_t n = 0;
    for (Tensor* p : const_cast<Layer&>(*layers_[i]).params()) n += p->size();
    out += strf("%2zu  %-28s -> %-16s params %zu\n", i,
                layers_[i]->describe().c_str(), shape_string(cur).c_str(), n);
  }
  out += strf("total params %zu\n", param_count());
  return out;
}

void Network::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("write failed: cannot open '" + path + "'");
  os.write(kNetMagic, 4);
  write_u16(os, kNetVersion);
  write_u32(os, static_cast<std::uint32_t>(layers_.size()));
  for (const auto& l : layers_) l->save(os);
  if (!os) throw DataError("write failed for '" + path + "'");
}

Network Network::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("unreadable: cannot open '" + path + "'");
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kNetMagic, 4) != 0)
    throw DataError("malformed header: bad magic in '" + path + "'");
  if (read_u16(is) != kNetVersion)
    throw DataError("malformed header: unsupported network file version");
  const std::uint32_t count = read_u32(is);
  Network net;
  for (std::uint32_t i = 0; i < count; ++i) net.add(load_layer(is));
  is.peek();
  if (!is.eof()) throw DataError("trailing bytes in network file '" + path + "'");
  return net;
}

}  // namespace ndet

#include "chartnet/nn/layers.hpp"

#include <cmath>

namespace chartnet::nn {

template <class T>
Dense<T> Dense<T>::create(ParameterStore<T>& store, const std::string& name, int in, int out, Rng& rng) {
  Dense d;
  d.w = &store.add(name + ".w", {in, out});
  d.b = &store.add(name + ".b", {1, out});
  init_uniform(*d.w, std::sqrt(6.0 / (in + out)), rng);
  return d;
}

template <class T>
Conv<T> Conv<T>::create(ParameterStore<T>& store, const std::string& name, int in_ch, int out_ch, int kernel,
                        int stride, int pad, Rng& rng) {
  Conv c;
  c.w = &store.add(name + ".w", {out_ch, in_ch, kernel, kernel});
  c.b = &store.add(name + ".b", {1, out_ch});
  c.stride = stride;
  c.pad = pad;
  init_uniform(*c.w, std::sqrt(6.0 / (in_ch * kernel * kernel)), rng);
  return c;
}

template <class T>
Lstm<T> Lstm<T>::create(ParameterStore<T>& store, const std::string& name, int in, int hidden, Rng& rng) {
  Lstm l;
  l.hidden = hidden;
  l.wx = &store.add(name + ".wx", {in, 4 * hidden});
  l.wh = &store.add(name + ".wh", {hidden, 4 * hidden});
  l.b = &store.add(name + ".b", {1, 4 * hidden});
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  init_uniform(*l.wx, bound, rng);
  init_uniform(*l.wh, bound, rng);
  for (int j = hidden; j < 2 * hidden; ++j) l.b->value[static_cast<std::size_t>(j)] = T(1);
  return l;
}

template <class T>
std::vector<Var<T>> Lstm<T>::run(Var<T> inputs, bool reverse) const {
  Graph<T>& g = inputs.graph();
  const int S = inputs.rows();
  const int h = hidden;
  // Input projections for all positions in one product.
  Var<T> xg = linear(inputs, g.param(*wx), g.param(*b));
  Var<T> whv = g.param(*wh);
  std::vector<Var<T>> states(static_cast<std::size_t>(S));
  Var<T> hprev, cprev;
  for (int step = 0; step < S; ++step) {
    const int s = reverse ? S - 1 - step : step;
    Var<T> gates = row(xg, s);
    if (hprev.valid()) gates = add(gates, matmul(hprev, whv));
    Var<T> ig = sigmoid(slice_cols(gates, 0, h));
    Var<T> fg = sigmoid(slice_cols(gates, h, h));
    Var<T> cg = tanh(slice_cols(gates, 2 * h, h));
    Var<T> og = sigmoid(slice_cols(gates, 3 * h, h));
    Var<T> c = cprev.valid() ? add(mul(fg, cprev), mul(ig, cg)) : mul(ig, cg);
    Var<T> hcur = mul(og, tanh(c));
    states[static_cast<std::size_t>(s)] = hcur;
    hprev = hcur;
    cprev = c;
  }
  return states;
}

template struct Dense<float>;
template struct Dense<double>;
template struct Conv<float>;
template struct Conv<double>;
template struct Lstm<float>;
template struct Lstm<double>;

}  // namespace chartnet::nn

#pragma once

#include <string>
#include <vector>

#include "chartnet/nn/graph.hpp"
#include "chartnet/nn/ops.hpp"
#include "chartnet/rng.hpp"

namespace chartnet::nn {

template <class T>
void init_uniform(Parameter<T>& p, double bound, Rng& rng) {
  for (auto& v : p.value.storage()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <class T>
void init_constant(Parameter<T>& p, double value) {
  p.value.fill(static_cast<T>(value));
}

// Fully connected map x[M x in] -> [M x out]; weights stored in x out.
template <class T>
struct Dense {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;

  static Dense create(ParameterStore<T>& store, const std::string& name, int in, int out, Rng& rng);
  int in() const { return w->value.dim(0); }
  int out() const { return w->value.dim(1); }
  Var<T> operator()(Var<T> x) const {
    Graph<T>& g = x.graph();
    return linear(x, g.param(*w), g.param(*b));
  }
};

template <class T>
struct Conv {
  Parameter<T>* w = nullptr;
  Parameter<T>* b = nullptr;
  int stride = 1;
  int pad = 1;

  static Conv create(ParameterStore<T>& store, const std::string& name, int in_ch, int out_ch, int kernel,
                     int stride, int pad, Rng& rng);
  Var<T> operator()(Var<T> x) const {
    Graph<T>& g = x.graph();
    return conv2d(x, g.param(*w), g.param(*b), stride, pad);
  }
};

// Single-direction LSTM with gate order (input, forget, cell, output).
template <class T>
struct Lstm {
  Parameter<T>* wx = nullptr;  // in x 4h
  Parameter<T>* wh = nullptr;  // h x 4h
  Parameter<T>* b = nullptr;   // 1 x 4h
  int hidden = 0;

  static Lstm create(ParameterStore<T>& store, const std::string& name, int in, int hidden, Rng& rng);

  // Runs over the rows of inputs [S x in]. Returns the S hidden states indexed
  // by input position (so for reverse=true, states[0] is the final state).
  std::vector<Var<T>> run(Var<T> inputs, bool reverse) const;
};

}  // namespace chartnet::nn

#include "selm/transformer.h"

namespace selm {

void init_linear(ParameterTree& tree, const std::string& prefix, std::int64_t in,
                 std::int64_t out, Rng& rng, bool frozen) {
  tree.add(prefix + ".weight", xavier_uniform(in, out, rng), frozen);
  tree.add(prefix + ".bias", Tensor({out}), frozen);
}

Var apply_linear(Graph& g, const ParameterTree& tree, const std::string& prefix, Var x) {
  return linear(x, g.parameter(tree, prefix + ".weight"), g.parameter(tree, prefix + ".bias"));
}

void init_layer_norm(ParameterTree& tree, const std::string& prefix, std::int64_t width,
                     bool frozen) {
  tree.add(prefix + ".gamma", filled({width}, 1.0f), frozen);
  tree.add(prefix + ".beta", Tensor({width}), frozen);
}

Var apply_layer_norm(Graph& g, const ParameterTree& tree, const std::string& prefix, Var x) {
  return layer_norm(x, g.parameter(tree, prefix + ".gamma"), g.parameter(tree, prefix + ".beta"));
}

void init_transformer_layer(ParameterTree& tree, const std::string& prefix, std::int64_t width,
                            Rng& rng, bool frozen) {
  init_layer_norm(tree, prefix + ".ln1", width, frozen);
  for (const char* name : {"query", "key", "value", "out"}) {
    init_linear(tree, prefix + ".attn." + name, width, width, rng, frozen);
  }
  init_layer_norm(tree, prefix + ".ln2", width, frozen);
  init_linear(tree, prefix + ".mlp.fc", width, 4 * width, rng, frozen);
  init_linear(tree, prefix + ".mlp.proj", 4 * width, width, rng, frozen);
}

Var transformer_layer(Graph& g, const ParameterTree& tree, const std::string& prefix, Var x,
                      int heads, bool causal) {
  Var h = apply_layer_norm(g, tree, prefix + ".ln1", x);
  Var q = apply_linear(g, tree, prefix + ".attn.query", h);
  Var k = apply_linear(g, tree, prefix + ".attn.key", h);
  Var v = apply_linear(g, tree, prefix + ".attn.value", h);
  Var a = attention(q, k, v, heads, causal);
  x = add(x, apply_linear(g, tree, prefix + ".attn.out", a));
  h = apply_layer_norm(g, tree, prefix + ".ln2", x);
  h = gelu(apply_linear(g, tree, prefix + ".mlp.fc", h));
  return add(x, apply_linear(g, tree, prefix + ".mlp.proj", h));
}

}  // namespace selm

#ifndef SELM_TRANSFORMER_H_
#define SELM_TRANSFORMER_H_

#include <cstdint>
#include <string>

#include "selm/autograd.h"
#include "selm/parameters.h"
#include "selm/tensor.h"

namespace selm {

// Pre-norm transformer layer:
//   x = x + out(attn(ln1(x)));  x = x + proj(gelu(fc(ln2(x))))
// Parameters live under `prefix`: ln1.{gamma,beta}, attn.{query,key,value,out}.
// {weight,bias}, ln2.{gamma,beta}, mlp.{fc,proj}.{weight,bias}.
void init_transformer_layer(ParameterTree& tree, const std::string& prefix, std::int64_t width,
                            Rng& rng, bool frozen);

Var transformer_layer(Graph& g, const ParameterTree& tree, const std::string& prefix, Var x,
                      int heads, bool causal);

// Adds `prefix`.weight [in x out] (Xavier) and `prefix`.bias [out] (zeros).
void init_linear(ParameterTree& tree, const std::string& prefix, std::int64_t in,
                 std::int64_t out, Rng& rng, bool frozen);
Var apply_linear(Graph& g, const ParameterTree& tree, const std::string& prefix, Var x);

void init_layer_norm(ParameterTree& tree, const std::string& prefix, std::int64_t width,
                     bool frozen);
Var apply_layer_norm(Graph& g, const ParameterTree& tree, const std::string& prefix, Var x);

}  // namespace selm

#endif  // SELM_TRANSFORMER_H_

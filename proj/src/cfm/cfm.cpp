#include "provg/cfm/cfm.hpp"

#include "provg/error.hpp"
#include "provg/numerics/ops.hpp"

namespace provg::cfm {

using nx::Init;

template <typename T>
FusionBlock<T>::FusionBlock(ParamStore<T>& store, const std::string& name, std::size_t channels)
    : channels_(channels),
      first_(store, name + ".conv1", channels, channels, 3, 1, 1),
      second_(store, name + ".conv2", channels, channels, 3, 1, 1, Init::kZeros) {}

template <typename T>
Var<T> FusionBlock<T>::operator()(Graph<T>& g, Var<T> x, std::size_t side) const {
  if (x.cols() != channels_)
    throw ShapeError("fusion block expects " + std::to_string(channels_) + " channels, got " +
                     std::to_string(x.cols()));
  auto scope = g.scope("fusion");
  auto h = nx::gelu(first_(g, x, side, side));
  return nx::add(x, second_(g, h, side, side));
}

template <typename T>
CrossScaleFusion<T>::CrossScaleFusion(ParamStore<T>& store, const nn::ModelDims& dims)
    : dims_(dims) {
  const std::size_t cf = dims.fused;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::string stage = "cfm.stage" + std::to_string(i + 1);
    lateral_[i] = nn::Conv<T>(store, stage + ".lateral", dims.channels[i], cf, 1, 1, 0);
    if (i < 3) td_blocks_[i] = FusionBlock<T>(store, stage + ".top_down", cf);
    if (i > 0) {
      bu_blocks_[i] = FusionBlock<T>(store, stage + ".bottom_up", cf);
      reduce_[i] = nn::Conv<T>(store, stage + ".reduce", cf, cf, 3, 2, 1);
    }
  }
}

template <typename T>
std::array<Var<T>, 4> CrossScaleFusion<T>::lateral(Graph<T>& g,
                                                   const enc::FeaturePyramid<T>& stages) const {
  std::array<Var<T>, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t s = stages.sides[i];
    if (i > 0 && stages.sides[i - 1] != 2 * s) throw ShapeError("fusion requires dyadic stage sizes");
    auto scope = g.scope("cfm.lateral" + std::to_string(i + 1));
    out[i] = lateral_[i](g, stages.stages[i], s, s);
  }
  return out;
}

template <typename T>
std::array<Var<T>, 4> CrossScaleFusion<T>::top_down(Graph<T>& g, const std::array<Var<T>, 4>& lat,
                                                    const std::array<std::size_t, 4>& sides) const {
  std::array<Var<T>, 4> down;
  down[3] = lat[3];
  for (int i = 2; i >= 0; --i) {
    auto scope = g.scope("cfm.down" + std::to_string(i + 1));
    auto up = nx::upsample_nearest2x(down[i + 1], sides[i + 1], sides[i + 1]);
    down[i] = td_blocks_[i](g, nx::add(lat[i], up), sides[i]);
  }
  return down;
}

template <typename T>
std::array<Var<T>, 4> CrossScaleFusion<T>::bottom_up(Graph<T>& g, const std::array<Var<T>, 4>& down,
                                                     const std::array<std::size_t, 4>& sides) const {
  std::array<Var<T>, 4> up;
  for (std::size_t i = 0; i < 4; ++i)
    if (!down[i].valid()) throw Error("bottom-up pass needs the complete top-down chain");
  up[0] = down[0];
  for (std::size_t i = 1; i < 4; ++i) {
    auto scope = g.scope("cfm.up" + std::to_string(i + 1));
    auto reduced = reduce_[i](g, up[i - 1], sides[i - 1], sides[i - 1]);
    up[i] = bu_blocks_[i](g, nx::add(down[i], reduced), sides[i]);
  }
  return up;
}

template <typename T>
FusedPyramid<T> CrossScaleFusion<T>::operator()(Graph<T>& g, const enc::FeaturePyramid<T>& stages,
                                                bool enabled) const {
  FusedPyramid<T> f;
  f.sides = stages.sides;
  f.lateral = lateral(g, stages);
  if (!enabled) {
    f.down = f.lateral;
    f.up = f.lateral;
    return f;
  }
  f.down = top_down(g, f.lateral, f.sides);
  f.up = bottom_up(g, f.down, f.sides);
  return f;
}

template class FusionBlock<float>;
template class FusionBlock<double>;
template class CrossScaleFusion<float>;
template class CrossScaleFusion<double>;

}  // namespace provg::cfm

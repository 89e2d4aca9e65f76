#pragma once

#include <string>
#include <vector>

#include "pandiff/image_tensor.hpp"
#include "pandiff/nn/graph.hpp"
#include "pandiff/nn/init.hpp"
#include "pandiff/nn/params.hpp"

namespace pandiff {

// Intermediate activations (d, h, w) share the raster container.
using FeatureMap = ImageTensor;

// Everything the denoiser is conditioned on for one image.
struct ConditionBundle {
  ImageTensor pan;      // (1, H, W)
  ImageTensor lrms_up;  // (C, H, W)
  ImageTensor bands;    // [LL(lrms_up), LH(pan), HL(pan), HH(pan)]: (C + 3, H/2, W/2)

  int in_bands() const { return lrms_up.bands(); }
};

ConditionBundle make_condition_bundle(const ImageTensor& pan, const ImageTensor& lrms_up);

// Projected attention operands for one sample. k and v share a spatial size
// that may differ from q's.
struct AttentionOperands {
  FeatureMap q;  // (d, hq, wq)
  FeatureMap k;  // (d, hk, wk)
  FeatureMap v;  // (d, hk, wk)
};

// How the attention output joins the decoder input.
enum class WaveletInjection { concat, add };

// ---- parameter declarations ------------------------------------------------

// MLP of two 3x3 convolutions (cond_ch -> hidden -> 2d) with SiLU between.
void declare_style_params(std::vector<nn::ParamDecl>& out, const std::string& prefix, int cond_ch,
                          int hidden, int d);
// 1x1 projections: q from the skip (d -> d), [k, v] from the band stack (band_ch -> 2d).
void declare_wavelet_params(std::vector<nn::ParamDecl>& out, const std::string& prefix, int band_ch,
                            int d);

// ---- graph-level building blocks (used by the denoiser) --------------------

// f * (1 + scale) + shift with (scale, shift) = split(MLP(avgpool(cond))).
// cond is the (n, C+1, H, W) stack [pan, lrms_up]; it is average-pooled to f's grid.
template <typename T>
typename nn::Graph<T>::Id style_modulate(nn::ParamBinder<T>& p, const std::string& prefix,
                                         typename nn::Graph<T>::Id f,
                                         typename nn::Graph<T>::Id cond);

// O = (softmax_k(k) v^T)^T softmax_c(q), computed through the d x d context
// matrix so memory never scales with hq*wq x hk*wk.
template <typename T>
typename nn::Graph<T>::Id linear_cross_attention(nn::Graph<T>& g, typename nn::Graph<T>::Id q,
                                                 typename nn::Graph<T>::Id k,
                                                 typename nn::Graph<T>::Id v);

// Returns [dec_in, skip, O] (concat) or [dec_in, skip + O] (add). bands is the
// (n, C+3, H/2, W/2) stack; it is average-pooled down to the skip's grid when
// the skip is coarser and used as-is otherwise.
template <typename T>
typename nn::Graph<T>::Id wavelet_modulate(nn::ParamBinder<T>& p, const std::string& prefix,
                                           typename nn::Graph<T>::Id dec_in,
                                           typename nn::Graph<T>::Id skip,
                                           typename nn::Graph<T>::Id bands,
                                           WaveletInjection mode = WaveletInjection::concat);

// ---- single-image convenience wrappers (inference) -------------------------

FeatureMap style_modulate(const FeatureMap& f, const ConditionBundle& cond,
                          const nn::ParamStore<float>& params, const std::string& prefix);
FeatureMap linear_cross_attention(const AttentionOperands& ops);
FeatureMap wavelet_modulate(const FeatureMap& dec_in, const FeatureMap& skip,
                            const ConditionBundle& cond, const nn::ParamStore<float>& params,
                            const std::string& prefix,
                            WaveletInjection mode = WaveletInjection::concat);

// Graph-node helpers for single images.
template <typename T>
typename nn::Graph<T>::Id image_node(nn::Graph<T>& g, const ImageTensor& t);
FeatureMap node_image(const nn::Graph<float>& g, nn::Graph<float>::Id id);

}  // namespace pandiff

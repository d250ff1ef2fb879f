#include "pixgrasp/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "pixgrasp/rng.hpp"

namespace pixgrasp {

namespace {

const char* kBranchNames[4] = {"pos", "att", "rpy", "fin"};
const int kBranchChannels[4] = {1, 2, 3, 4};
const int kBranchOffset[4] = {0, 1, 3, 6};

int encoder_out_size(const NetworkDescriptor& d, int stage) {
  int size = d.resolution;
  for (int i = 0; i <= stage; ++i) size /= 2;
  return size;
}

void check_descriptor(const NetworkDescriptor& d) {
  if (d.encoder.empty()) throw std::runtime_error("descriptor: empty encoder");
  int size = d.resolution;
  for (const EncoderStage& st : d.encoder) {
    if (st.stride != 2) throw std::runtime_error("descriptor: strides must be 2");
    if (size % 2 != 0) throw std::runtime_error("descriptor: odd stage size");
    size /= 2;
  }
  if (d.branch_deconvs < 1 ||
      d.branch_deconvs > static_cast<int>(d.encoder.size())) {
    throw std::runtime_error("descriptor: branch_deconvs out of range");
  }
}

}  // namespace

std::string NetworkDescriptor::serialize() const {
  std::ostringstream os;
  os << "name=" << name << ";resolution=" << resolution << ";encoder=";
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    if (i) os << ",";
    os << encoder[i].out_ch << "x" << encoder[i].kernel << "x"
       << encoder[i].stride;
  }
  os << ";pyramid=" << pyramid_channels << ";branch_hidden=" << branch_hidden
     << ";branch_deconvs=" << branch_deconvs
     << ";value_head=" << (value_head ? 1 : 0) << ";input_offset=" << input_offset
     << ";input_gain=" << input_gain;
  return os.str();
}

NetworkDescriptor NetworkDescriptor::parse(const std::string& text) {
  NetworkDescriptor d;
  d.encoder.clear();
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = item.substr(0, eq);
    const std::string val = item.substr(eq + 1);
    if (key == "name") {
      d.name = val;
    } else if (key == "resolution") {
      d.resolution = std::stoi(val);
    } else if (key == "encoder") {
      std::istringstream es(val);
      std::string stage;
      while (std::getline(es, stage, ',')) {
        EncoderStage st;
        if (std::sscanf(stage.c_str(), "%dx%dx%d", &st.out_ch, &st.kernel,
                        &st.stride) != 3) {
          throw std::runtime_error("bad encoder stage: " + stage);
        }
        d.encoder.push_back(st);
      }
    } else if (key == "pyramid") {
      d.pyramid_channels = std::stoi(val);
    } else if (key == "branch_hidden") {
      d.branch_hidden = std::stoi(val);
    } else if (key == "branch_deconvs") {
      d.branch_deconvs = std::stoi(val);
    } else if (key == "value_head") {
      d.value_head = std::stoi(val) != 0;
    } else if (key == "input_offset") {
      d.input_offset = std::stod(val);
    } else if (key == "input_gain") {
      d.input_gain = std::stod(val);
    } else {
      throw std::runtime_error("unknown descriptor key: " + key);
    }
  }
  check_descriptor(d);
  return d;
}

NetworkDescriptor NetworkDescriptor::preset(const std::string& name) {
  NetworkDescriptor d;
  d.name = name;
  if (name == "toy16") {
    d.resolution = 16;
    d.encoder = {{4, 3, 2}, {8, 3, 2}};
    d.pyramid_channels = 8;
    d.branch_hidden = 4;
    d.branch_deconvs = 1;
  } else if (name == "desk64") {
    d.resolution = 64;
    d.encoder = {{8, 3, 2}, {16, 3, 2}, {32, 3, 2}, {32, 3, 2}};
    d.pyramid_channels = 16;
    d.branch_hidden = 8;
    d.branch_deconvs = 1;
  } else if (name == "paper224") {
    // Scaled-back reading of the published stack at full resolution.
    d.resolution = 224;
    d.encoder = {{32, 9, 2}, {64, 5, 2}, {64, 3, 2}, {128, 3, 2}, {128, 3, 2}};
    d.pyramid_channels = 32;
    d.branch_hidden = 16;
    d.branch_deconvs = 1;
  } else {
    throw std::runtime_error("unknown network preset: " + name);
  }
  check_descriptor(d);
  return d;
}

template <typename T>
std::size_t NetworkParams<T>::total_parameters() const {
  std::size_t n = 0;
  for (const auto& [k, v] : tensors) n += v.numel();
  return n;
}

template <typename T>
void Gradients<T>::zero() {
  for (auto& [k, v] : tensors) v.zero();
}

template <typename T>
void Gradients<T>::add_scaled(const Gradients<T>& other, T factor) {
  for (auto& [k, v] : tensors) {
    const Tensor<T>& o = other.tensors.at(k);
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] += factor * o.data[i];
  }
}

template <typename T>
double Gradients<T>::squared_norm() const {
  double acc = 0.0;
  for (const auto& [k, v] : tensors) {
    for (const T g : v.data) acc += static_cast<double>(g) * static_cast<double>(g);
  }
  return acc;
}

template <typename T>
void Gradients<T>::scale(T factor) {
  for (auto& [k, v] : tensors) {
    for (T& g : v.data) g *= factor;
  }
}

namespace {

template <typename T>
void fill_fanin_uniform(Tensor<T>& w, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  for (T& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace

template <typename T>
NetworkParams<T> init_params(const NetworkDescriptor& desc, std::uint64_t seed) {
  check_descriptor(desc);
  NetworkParams<T> params;
  params.descriptor = desc;
  Rng rng(Rng::derive(seed, 0, /*stream_tag=*/0x11));

  const int n = static_cast<int>(desc.encoder.size());
  const int entry_stage = desc.branch_deconvs - 1;
  int in_ch = 1;
  for (int i = 0; i < n; ++i) {
    const EncoderStage& st = desc.encoder[static_cast<std::size_t>(i)];
    Tensor<T> w({st.out_ch, in_ch * st.kernel * st.kernel});
    fill_fanin_uniform(w, in_ch * st.kernel * st.kernel, rng);
    params.tensors["enc" + std::to_string(i) + ".w"] = std::move(w);
    params.tensors["enc" + std::to_string(i) + ".b"] = Tensor<T>({st.out_ch});
    in_ch = st.out_ch;
  }
  for (int i = entry_stage; i < n; ++i) {
    const int ch = desc.encoder[static_cast<std::size_t>(i)].out_ch;
    Tensor<T> w({desc.pyramid_channels, ch});
    fill_fanin_uniform(w, ch, rng);
    params.tensors["lat" + std::to_string(i) + ".w"] = std::move(w);
    params.tensors["lat" + std::to_string(i) + ".b"] =
        Tensor<T>({desc.pyramid_channels});
  }
  const int entry_ch = desc.pyramid_channels + 1;  // + scale plane
  for (int b = 0; b < 4; ++b) {
    const std::string br = kBranchNames[b];
    Tensor<T> cw({desc.branch_hidden, entry_ch * 9});
    fill_fanin_uniform(cw, entry_ch * 9, rng);
    params.tensors[br + ".conv.w"] = std::move(cw);
    params.tensors[br + ".conv.b"] = Tensor<T>({desc.branch_hidden});
    for (int j = 0; j < desc.branch_deconvs; ++j) {
      Tensor<T> uw({desc.branch_hidden, desc.branch_hidden, 2, 2});
      fill_fanin_uniform(uw, desc.branch_hidden, rng);
      params.tensors[br + ".up" + std::to_string(j) + ".w"] = std::move(uw);
      params.tensors[br + ".up" + std::to_string(j) + ".b"] =
          Tensor<T>({desc.branch_hidden});
    }
    Tensor<T> ow({kBranchChannels[b], desc.branch_hidden});
    fill_fanin_uniform(ow, desc.branch_hidden, rng);
    params.tensors[br + ".out.w"] = std::move(ow);
    params.tensors[br + ".out.b"] = Tensor<T>({kBranchChannels[b]});
  }
  if (desc.value_head) {
    Tensor<T> vw({1, entry_ch});
    fill_fanin_uniform(vw, entry_ch, rng);
    params.tensors["value.w"] = std::move(vw);
    params.tensors["value.b"] = Tensor<T>({1});
  }
  Tensor<T> ls({8});
  for (T& v : ls.data) v = T(-1);
  params.tensors["log_std"] = std::move(ls);
  return params;
}

template <typename T>
Gradients<T> zero_gradients(const NetworkParams<T>& params) {
  Gradients<T> g;
  for (const auto& [k, v] : params.tensors) {
    Tensor<T> t;
    t.dims = v.dims;
    t.rank = v.rank;
    t.data.assign(v.data.size(), T(0));
    g.tensors[k] = std::move(t);
  }
  return g;
}

namespace {

template <typename T>
void ensure_shape(Tensor<T>& t, std::initializer_list<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  if (t.numel() != n) {
    t.resize(shape);
  } else {
    int i = 0;
    t.rank = static_cast<int>(shape.size());
    for (int d : shape) t.dims[static_cast<std::size_t>(i++)] = d;
    for (; i < 4; ++i) t.dims[static_cast<std::size_t>(i)] = 1;
  }
}

}  // namespace

template <typename T>
ActionMaps<T> forward(const NetworkParams<T>& params, const T* depth,
                      double s_scale, ForwardCache<T>* cache) {
  const NetworkDescriptor& d = params.descriptor;
  const int r = d.resolution;
  const int n = static_cast<int>(d.encoder.size());
  const int entry_stage = d.branch_deconvs - 1;

  ForwardCache<T> local;
  ForwardCache<T>& cc = cache ? *cache : local;
  cc.s_scale = s_scale;
  cc.enc.resize(static_cast<std::size_t>(n));
  cc.enc_cols.resize(static_cast<std::size_t>(n));
  cc.lat.resize(static_cast<std::size_t>(n - entry_stage));
  cc.pyr.resize(static_cast<std::size_t>(n - entry_stage));
  cc.branch_cols.resize(4);
  cc.branch_h.resize(4);
  cc.branch_up.resize(4);

  ensure_shape(cc.input, {1, r, r});
  for (int i = 0; i < r * r; ++i) {
    cc.input.data[static_cast<std::size_t>(i)] =
        static_cast<T>((static_cast<double>(depth[i]) + d.input_offset) *
                       d.input_gain);
  }

  // Encoder.
  int in_ch = 1;
  int size = r;
  const T* x = cc.input.ptr();
  for (int i = 0; i < n; ++i) {
    const EncoderStage& st = d.encoder[static_cast<std::size_t>(i)];
    ConvSpec spec{in_ch, st.out_ch, st.kernel, st.stride, st.kernel / 2};
    const int out = spec.out_size(size);
    ensure_shape(cc.enc_cols[static_cast<std::size_t>(i)],
                 {in_ch * st.kernel * st.kernel, out * out});
    ensure_shape(cc.enc[static_cast<std::size_t>(i)], {st.out_ch, out, out});
    conv2d_forward(x, size, size, spec,
                   params.at("enc" + std::to_string(i) + ".w").ptr(),
                   params.at("enc" + std::to_string(i) + ".b").ptr(),
                   cc.enc_cols[static_cast<std::size_t>(i)].ptr(),
                   cc.enc[static_cast<std::size_t>(i)].ptr());
    relu_forward(cc.enc[static_cast<std::size_t>(i)].ptr(),
                 cc.enc[static_cast<std::size_t>(i)].numel());
    x = cc.enc[static_cast<std::size_t>(i)].ptr();
    in_ch = st.out_ch;
    size = out;
  }

  // Pyramid: coarsest lateral, then upsample-add down to the entry stage.
  const int pc = d.pyramid_channels;
  for (int i = n - 1; i >= entry_stage; --i) {
    const int sz = encoder_out_size(d, i);
    const int ch = d.encoder[static_cast<std::size_t>(i)].out_ch;
    ConvSpec spec{ch, pc, 1, 1, 0};
    Tensor<T>& lat = cc.lat[static_cast<std::size_t>(i - entry_stage)];
    ensure_shape(lat, {pc, sz, sz});
    // k=1 im2col is the identity; feed the activation directly.
    conv2d_forward(cc.enc[static_cast<std::size_t>(i)].ptr(), sz, sz, spec,
                   params.at("lat" + std::to_string(i) + ".w").ptr(),
                   params.at("lat" + std::to_string(i) + ".b").ptr(),
                   static_cast<T*>(nullptr), lat.ptr());
    Tensor<T>& pyr = cc.pyr[static_cast<std::size_t>(i - entry_stage)];
    ensure_shape(pyr, {pc, sz, sz});
    if (i == n - 1) {
      pyr.data = lat.data;
    } else {
      const Tensor<T>& coarser = cc.pyr[static_cast<std::size_t>(i + 1 - entry_stage)];
      upsample2x_forward(coarser.ptr(), pc, sz / 2, sz / 2, pyr.ptr());
      for (std::size_t k = 0; k < pyr.data.size(); ++k) pyr.data[k] += lat.data[k];
    }
  }

  // Branch entry: pyramid features + the zoom-level plane.
  const int es = encoder_out_size(d, entry_stage);
  ensure_shape(cc.entry, {pc + 1, es, es});
  std::memcpy(cc.entry.ptr(), cc.pyr[0].ptr(),
              sizeof(T) * static_cast<std::size_t>(pc) * es * es);
  T* plane = cc.entry.ptr() + static_cast<std::size_t>(pc) * es * es;
  std::fill(plane, plane + static_cast<std::size_t>(es) * es,
            static_cast<T>(s_scale));

  ActionMaps<T> out;
  out.resolution = r;
  out.maps.resize({10, r, r});

  for (int b = 0; b < 4; ++b) {
    const std::string br = kBranchNames[b];
    ConvSpec spec{pc + 1, d.branch_hidden, 3, 1, 1};
    ensure_shape(cc.branch_cols[static_cast<std::size_t>(b)],
                 {(pc + 1) * 9, es * es});
    ensure_shape(cc.branch_h[static_cast<std::size_t>(b)],
                 {d.branch_hidden, es, es});
    conv2d_forward(cc.entry.ptr(), es, es, spec, params.at(br + ".conv.w").ptr(),
                   params.at(br + ".conv.b").ptr(),
                   cc.branch_cols[static_cast<std::size_t>(b)].ptr(),
                   cc.branch_h[static_cast<std::size_t>(b)].ptr());
    relu_forward(cc.branch_h[static_cast<std::size_t>(b)].ptr(),
                 cc.branch_h[static_cast<std::size_t>(b)].numel());

    cc.branch_up[static_cast<std::size_t>(b)].resize(
        static_cast<std::size_t>(d.branch_deconvs));
    const T* cur = cc.branch_h[static_cast<std::size_t>(b)].ptr();
    int cur_size = es;
    for (int j = 0; j < d.branch_deconvs; ++j) {
      Tensor<T>& up = cc.branch_up[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)];
      ensure_shape(up, {d.branch_hidden, cur_size * 2, cur_size * 2});
      deconv2d_forward(cur, cur_size, cur_size, d.branch_hidden, d.branch_hidden,
                       2, params.at(br + ".up" + std::to_string(j) + ".w").ptr(),
                       params.at(br + ".up" + std::to_string(j) + ".b").ptr(),
                       up.ptr());
      relu_forward(up.ptr(), up.numel());
      cur = up.ptr();
      cur_size *= 2;
    }

    ConvSpec out_spec{d.branch_hidden, kBranchChannels[b], 1, 1, 0};
    conv2d_forward(cur, r, r, out_spec, params.at(br + ".out.w").ptr(),
                   params.at(br + ".out.b").ptr(), static_cast<T*>(nullptr),
                   out.maps.ptr() + static_cast<std::size_t>(kBranchOffset[b]) * r * r);
  }

  if (d.value_head) {
    const T* vw = params.at("value.w").ptr();
    double acc = static_cast<double>(params.at("value.b").data[0]);
    const double inv = 1.0 / (static_cast<double>(es) * es);
    for (int c = 0; c < pc + 1; ++c) {
      double mean = 0.0;
      const T* chp = cc.entry.ptr() + static_cast<std::size_t>(c) * es * es;
      for (int k = 0; k < es * es; ++k) mean += static_cast<double>(chp[k]);
      acc += static_cast<double>(vw[c]) * mean * inv;
    }
    out.has_value = true;
    out.value = static_cast<T>(acc);
  }

  for (const T v : out.maps.data) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw std::runtime_error("forward: non-finite activation");
    }
  }
  return out;
}

template <typename T>
void backward(const NetworkParams<T>& params, const ForwardCache<T>& cache,
              const Tensor<T>& maps_grad, T value_grad, Gradients<T>& grads,
              Tensor<T>* input_grad) {
  const NetworkDescriptor& d = params.descriptor;
  const int r = d.resolution;
  const int n = static_cast<int>(d.encoder.size());
  const int entry_stage = d.branch_deconvs - 1;
  const int pc = d.pyramid_channels;
  const int es = encoder_out_size(d, entry_stage);

  Tensor<T> gentry({pc + 1, es, es});

  // Branches.
  for (int b = 0; b < 4; ++b) {
    const std::string br = kBranchNames[b];
    const int ch = kBranchChannels[b];
    const T* gout =
        maps_grad.ptr() + static_cast<std::size_t>(kBranchOffset[b]) * r * r;

    // Output 1x1 conv.
    const Tensor<T>& top =
        cache.branch_up[static_cast<std::size_t>(b)][static_cast<std::size_t>(d.branch_deconvs - 1)];
    ConvSpec out_spec{d.branch_hidden, ch, 1, 1, 0};
    Tensor<T> gtop({d.branch_hidden, r, r});
    Tensor<T> gcols_scratch({d.branch_hidden, r * r});
    conv2d_backward(top.ptr(), r, r, out_spec, params.at(br + ".out.w").ptr(),
                    gout, gcols_scratch.ptr(), gtop.ptr(),
                    grads.tensors.at(br + ".out.w").ptr(),
                    grads.tensors.at(br + ".out.b").ptr());

    // Deconv stack, in reverse.
    Tensor<T> gcur = std::move(gtop);
    for (int j = d.branch_deconvs - 1; j >= 0; --j) {
      const Tensor<T>& up =
          cache.branch_up[static_cast<std::size_t>(b)][static_cast<std::size_t>(j)];
      relu_backward(up.ptr(), gcur.ptr(), up.numel());
      const Tensor<T>& below =
          j == 0 ? cache.branch_h[static_cast<std::size_t>(b)]
                 : cache.branch_up[static_cast<std::size_t>(b)][static_cast<std::size_t>(j - 1)];
      const int in_size = below.dims[1];
      Tensor<T> gbelow({d.branch_hidden, in_size, in_size});
      deconv2d_backward(below.ptr(), in_size, in_size, d.branch_hidden,
                        d.branch_hidden, 2,
                        params.at(br + ".up" + std::to_string(j) + ".w").ptr(),
                        gcur.ptr(), gbelow.ptr(),
                        grads.tensors.at(br + ".up" + std::to_string(j) + ".w").ptr(),
                        grads.tensors.at(br + ".up" + std::to_string(j) + ".b").ptr());
      gcur = std::move(gbelow);
    }

    // Branch entry conv.
    relu_backward(cache.branch_h[static_cast<std::size_t>(b)].ptr(), gcur.ptr(),
                  cache.branch_h[static_cast<std::size_t>(b)].numel());
    ConvSpec spec{pc + 1, d.branch_hidden, 3, 1, 1};
    Tensor<T> gx({pc + 1, es, es});
    Tensor<T> gcols({(pc + 1) * 9, es * es});
    conv2d_backward(cache.branch_cols[static_cast<std::size_t>(b)].ptr(), es, es,
                    spec, params.at(br + ".conv.w").ptr(), gcur.ptr(),
                    gcols.ptr(), gx.ptr(), grads.tensors.at(br + ".conv.w").ptr(),
                    grads.tensors.at(br + ".conv.b").ptr());
    for (std::size_t k = 0; k < gentry.data.size(); ++k) {
      gentry.data[k] += gx.data[k];
    }
  }

  // Value head contributes to the shared entry features.
  if (d.value_head && value_grad != T(0)) {
    const T* vw = params.at("value.w").ptr();
    T* gvw = grads.tensors.at("value.w").ptr();
    const double inv = 1.0 / (static_cast<double>(es) * es);
    for (int c = 0; c < pc + 1; ++c) {
      const T* chp = cache.entry.ptr() + static_cast<std::size_t>(c) * es * es;
      double mean = 0.0;
      for (int k = 0; k < es * es; ++k) mean += static_cast<double>(chp[k]);
      gvw[c] += value_grad * static_cast<T>(mean * inv);
      T* gch = gentry.ptr() + static_cast<std::size_t>(c) * es * es;
      const T per_pixel = value_grad * vw[c] * static_cast<T>(inv);
      for (int k = 0; k < es * es; ++k) gch[k] += per_pixel;
    }
    grads.tensors.at("value.b").data[0] += value_grad;
  }

  // Split off the (non-learned) scale plane; the rest is the pyramid grad.
  std::vector<Tensor<T>> gpyr(static_cast<std::size_t>(n - entry_stage));
  {
    Tensor<T>& g0 = gpyr[0];
    g0.resize({pc, es, es});
    std::memcpy(g0.ptr(), gentry.ptr(), sizeof(T) * g0.numel());
  }

  // Pyramid backward: each level feeds its lateral and the coarser level.
  std::vector<Tensor<T>> genc(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int sz = encoder_out_size(d, i);
    genc[static_cast<std::size_t>(i)].resize(
        {d.encoder[static_cast<std::size_t>(i)].out_ch, sz, sz});
  }
  for (int i = entry_stage; i <= n - 1; ++i) {
    const int sz = encoder_out_size(d, i);
    Tensor<T>& g = gpyr[static_cast<std::size_t>(i - entry_stage)];
    if (i < n - 1) {
      Tensor<T>& gcoarser = gpyr[static_cast<std::size_t>(i + 1 - entry_stage)];
      gcoarser.resize({pc, sz / 2, sz / 2});
      upsample2x_backward(g.ptr(), pc, sz / 2, sz / 2, gcoarser.ptr());
    }
    // Lateral 1x1 backward into the encoder activation.
    const int ch = d.encoder[static_cast<std::size_t>(i)].out_ch;
    ConvSpec spec{ch, pc, 1, 1, 0};
    Tensor<T> gx({ch, sz, sz});
    Tensor<T> gcols({ch, sz * sz});
    conv2d_backward(cache.enc[static_cast<std::size_t>(i)].ptr(), sz, sz, spec,
                    params.at("lat" + std::to_string(i) + ".w").ptr(), g.ptr(),
                    gcols.ptr(), gx.ptr(),
                    grads.tensors.at("lat" + std::to_string(i) + ".w").ptr(),
                    grads.tensors.at("lat" + std::to_string(i) + ".b").ptr());
    for (std::size_t k = 0; k < gx.data.size(); ++k) {
      genc[static_cast<std::size_t>(i)].data[k] += gx.data[k];
    }
  }

  // Encoder backward.
  for (int i = n - 1; i >= 0; --i) {
    const EncoderStage& st = d.encoder[static_cast<std::size_t>(i)];
    const int in_size = i == 0 ? r : encoder_out_size(d, i - 1);
    const int in_ch = i == 0 ? 1 : d.encoder[static_cast<std::size_t>(i - 1)].out_ch;
    relu_backward(cache.enc[static_cast<std::size_t>(i)].ptr(),
                  genc[static_cast<std::size_t>(i)].ptr(),
                  cache.enc[static_cast<std::size_t>(i)].numel());
    ConvSpec spec{in_ch, st.out_ch, st.kernel, st.stride, st.kernel / 2};
    const bool need_gx = i > 0 || input_grad != nullptr;
    Tensor<T> gx, gcols;
    if (need_gx) {
      gx.resize({in_ch, in_size, in_size});
      gcols.resize({in_ch * st.kernel * st.kernel,
                    spec.out_size(in_size) * spec.out_size(in_size)});
    }
    conv2d_backward(cache.enc_cols[static_cast<std::size_t>(i)].ptr(), in_size,
                    in_size, spec, params.at("enc" + std::to_string(i) + ".w").ptr(),
                    genc[static_cast<std::size_t>(i)].ptr(),
                    need_gx ? gcols.ptr() : nullptr, need_gx ? gx.ptr() : nullptr,
                    grads.tensors.at("enc" + std::to_string(i) + ".w").ptr(),
                    grads.tensors.at("enc" + std::to_string(i) + ".b").ptr());
    if (i > 0) {
      for (std::size_t k = 0; k < gx.data.size(); ++k) {
        genc[static_cast<std::size_t>(i - 1)].data[k] += gx.data[k];
      }
    } else if (input_grad) {
      input_grad->resize({1, r, r});
      // Chain through the input normalization: d(norm)/d(depth) = gain.
      for (std::size_t k = 0; k < gx.data.size(); ++k) {
        input_grad->data[k] = gx.data[k] * static_cast<T>(d.input_gain);
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint IO

namespace {

constexpr char kMagic[4] = {'P', 'X', 'G', 'R'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void write_entry(std::ostream& os, const std::string& name,
                 const Tensor<float>& t) {
  write_raw<std::uint16_t>(os, static_cast<std::uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_raw<std::uint8_t>(os, static_cast<std::uint8_t>(t.rank));
  for (int i = 0; i < t.rank; ++i) {
    write_raw<std::uint32_t>(os, static_cast<std::uint32_t>(t.dims[static_cast<std::size_t>(i)]));
  }
  os.write(reinterpret_cast<const char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

std::pair<std::string, Tensor<float>> read_entry(std::istream& is) {
  const auto name_len = read_raw<std::uint16_t>(is);
  std::string name(name_len, '\0');
  is.read(name.data(), name_len);
  const auto rank = read_raw<std::uint8_t>(is);
  Tensor<float> t;
  t.rank = rank;
  std::size_t n = 1;
  for (int i = 0; i < rank; ++i) {
    t.dims[static_cast<std::size_t>(i)] = static_cast<int>(read_raw<std::uint32_t>(is));
    n *= static_cast<std::size_t>(t.dims[static_cast<std::size_t>(i)]);
  }
  for (int i = rank; i < 4; ++i) t.dims[static_cast<std::size_t>(i)] = 1;
  t.data.resize(n);
  is.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(n * sizeof(float)));
  return {name, std::move(t)};
}

Tensor<float> text_to_tensor(const std::string& text) {
  Tensor<float> t({static_cast<int>(text.size())});
  for (std::size_t i = 0; i < text.size(); ++i) {
    t.data[i] = static_cast<float>(static_cast<unsigned char>(text[i]));
  }
  return t;
}

std::string tensor_to_text(const Tensor<float>& t) {
  std::string s(t.data.size(), '\0');
  for (std::size_t i = 0; i < t.data.size(); ++i) {
    s[i] = static_cast<char>(static_cast<unsigned char>(t.data[i]));
  }
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const NetworkParams<float>& params,
                     const std::map<std::string, Tensor<float>>& extra) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  os.write(kMagic, 4);
  write_raw<std::uint16_t>(os, kVersion);
  const std::uint32_t count = static_cast<std::uint32_t>(
      1 + params.tensors.size() + extra.size());
  write_raw<std::uint32_t>(os, count);
  write_entry(os, "__descriptor__", text_to_tensor(params.descriptor.serialize()));
  for (const auto& [name, t] : params.tensors) write_entry(os, name, t);
  for (const auto& [name, t] : extra) write_entry(os, "__extra__" + name, t);
}

NetworkParams<float> load_checkpoint(const std::string& path,
                                     std::map<std::string, Tensor<float>>* extra) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("bad checkpoint magic in " + path);
  }
  const auto version = read_raw<std::uint16_t>(is);
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version in " + path);
  }
  const auto count = read_raw<std::uint32_t>(is);
  NetworkParams<float> params;
  bool have_descriptor = false;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = read_entry(is);
    if (!is) throw std::runtime_error("truncated checkpoint " + path);
    if (name == "__descriptor__") {
      params.descriptor = NetworkDescriptor::parse(tensor_to_text(t));
      have_descriptor = true;
    } else if (name.rfind("__extra__", 0) == 0) {
      if (extra) (*extra)[name.substr(9)] = std::move(t);
    } else {
      params.tensors[name] = std::move(t);
    }
  }
  if (!have_descriptor) {
    throw std::runtime_error("checkpoint missing descriptor: " + path);
  }
  return params;
}

// Explicit instantiations.
template struct NetworkParams<float>;
template struct NetworkParams<double>;
template struct Gradients<float>;
template struct Gradients<double>;
template NetworkParams<float> init_params<float>(const NetworkDescriptor&, std::uint64_t);
template NetworkParams<double> init_params<double>(const NetworkDescriptor&, std::uint64_t);
template Gradients<float> zero_gradients<float>(const NetworkParams<float>&);
template Gradients<double> zero_gradients<double>(const NetworkParams<double>&);
template ActionMaps<float> forward<float>(const NetworkParams<float>&, const float*,
                                          double, ForwardCache<float>*);
template ActionMaps<double> forward<double>(const NetworkParams<double>&,
                                            const double*, double,
                                            ForwardCache<double>*);
template void backward<float>(const NetworkParams<float>&, const ForwardCache<float>&,
                              const Tensor<float>&, float, Gradients<float>&,
                              Tensor<float>*);
template void backward<double>(const NetworkParams<double>&,
                               const ForwardCache<double>&, const Tensor<double>&,
                               double, Gradients<double>&, Tensor<double>*);
template NetworkParams<double> NetworkParams<float>::cast<double>() const;
template NetworkParams<float> NetworkParams<double>::cast<float>() const;

}  // namespace pixgrasp

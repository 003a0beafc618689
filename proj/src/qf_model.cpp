// Copyright (c) 2026 qfpred contributors
// SPDX-License-Identifier: Apache-2.0

#include "qfpred/qf_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace qfpred {

using nlohmann::json;

std::string to_string(HeadMode m) {
  return m == HeadMode::regression ? "regression" : "classification";
}

HeadMode head_mode_from_string(const std::string& s) {
  if (s == "regression") return HeadMode::regression;
  if (s == "classification") return HeadMode::classification;
  throw RangeError("unknown head mode '" + s + "'");
}

// ---------------------------------------------------------------------------
// ArchSpec
// ---------------------------------------------------------------------------

void ArchSpec::validate() const {
  if (input_channels != 1 && input_channels != 3) {
    throw DimensionError("arch: input channels must be 1 or 3, got " +
                         std::to_string(input_channels));
  }
  int convs = 0, pools = 0;
  int ch = input_channels;
  std::vector<int> conv_ks;
  for (const auto& l : layers) {
    if (l.kind == LayerSpec::Kind::pool) {
      ++pools;
      continue;
    }
    ++convs;
    conv_ks.push_back(l.k);
    if (l.k < 1) throw DimensionError("arch: conv kernel must be >= 1");
    if (l.in_ch != ch) {
      throw DimensionError("arch: conv " + std::to_string(convs) + " expects in_ch " +
                           std::to_string(l.in_ch) + " but previous layer provides " +
                           std::to_string(ch));
    }
    ch = l.out_ch;
  }
  if (convs != 7) {
    throw DimensionError("arch: exactly 7 convolution layers required, got " +
                         std::to_string(convs));
  }
  if (pools != 2) {
    throw DimensionError("arch: exactly 2 max-pool layers required, got " +
                         std::to_string(pools));
  }
  if (conv_ks[5] != 1 || conv_ks[6] != 1) {
    throw DimensionError("arch: the final two convolutions must be 1x1");
  }
  const int head = layers.back().out_ch;
  if (mode == HeadMode::regression && head != 1) {
    throw DimensionError("arch: regression head must have 1 channel, got " +
                         std::to_string(head));
  }
  if (mode == HeadMode::classification && head != 5) {
    throw DimensionError("arch: classification head must have 5 channels, got " +
                         std::to_string(head));
  }
  if (output_stride() != 4) {
    throw DimensionError("arch: total downsampling factor must be 4");
  }
}

int ArchSpec::receptive_field() const {
  int rf = 1, jump = 1;
  for (const auto& l : layers) {
    if (l.kind == LayerSpec::Kind::conv) {
      rf += (l.k - 1) * jump;
    } else {
      rf += jump;  // pool kernel 2
      jump *= 2;
    }
  }
  return rf;
}

int ArchSpec::output_stride() const {
  int s = 1;
  for (const auto& l : layers) {
    if (l.kind == LayerSpec::Kind::pool) s *= 2;
  }
  return s;
}

Shape4 ArchSpec::map_shape(const Shape4& in) const {
  Shape4 s = in;
  for (const auto& l : layers) {
    if (l.kind == LayerSpec::Kind::conv) {
      s = nn::conv2d_out_shape(s, l.out_ch, l.k, 1, 0);
    } else {
      if (s.h < 2 || s.w < 2) {
        throw DimensionError("arch: input too small, pooled extent collapses at " + to_string(s));
      }
      s.h /= 2;
      s.w /= 2;
    }
  }
  return s;
}

int ArchSpec::min_input_side() const {
  // valid convs + exact pools: the receptive field is the smallest side that
  // yields a 1x1 map, but probe to stay honest about floor arithmetic
  for (int side = 1; side <= receptive_field() + 4; ++side) {
    try {
      map_shape(Shape4{1, input_channels, side, side});
      return side;
    } catch (const DimensionError&) {
      continue;
    }
  }
  throw Error("arch: no feasible input size found");
}

std::int64_t ArchSpec::trainable_param_count() const {
  std::int64_t total = 0;
  int conv_index = 0;
  const int n_convs = 7;
  for (const auto& l : layers) {
    if (l.kind != LayerSpec::Kind::conv) continue;
    ++conv_index;
    total += static_cast<std::int64_t>(l.k) * l.k * l.in_ch * l.out_ch + l.out_ch;
    if (conv_index < n_convs) total += 2LL * l.out_ch;  // BN scale + shift
  }
  return total;
}

std::string ArchSpec::serialize() const {
  std::ostringstream os;
  os << "in=" << input_channels << " mode=" << to_string(mode);
  for (const auto& l : layers) {
    if (l.kind == LayerSpec::Kind::pool) {
      os << " pool";
    } else {
      os << " conv" << l.k << ":" << l.in_ch << "x" << l.out_ch;
    }
  }
  return os.str();
}

ArchSpec ArchSpec::parse(const std::string& line) {
  ArchSpec spec;
  spec.layers.clear();
  std::istringstream is(line);
  std::string tok;
  bool have_in = false, have_mode = false;
  while (is >> tok) {
    if (tok.rfind("in=", 0) == 0) {
      spec.input_channels = std::stoi(tok.substr(3));
      have_in = true;
    } else if (tok.rfind("mode=", 0) == 0) {
      spec.mode = head_mode_from_string(tok.substr(5));
      have_mode = true;
    } else if (tok == "pool") {
      spec.layers.push_back({LayerSpec::Kind::pool, 0, 0, 0});
    } else if (tok.rfind("conv", 0) == 0) {
      const auto colon = tok.find(':');
      const auto x = tok.find('x', colon);
      if (colon == std::string::npos || x == std::string::npos) {
        throw FormatError("arch: cannot parse layer token '" + tok + "'");
      }
      LayerSpec l;
      l.kind = LayerSpec::Kind::conv;
      l.k = std::stoi(tok.substr(4, colon - 4));
      l.in_ch = std::stoi(tok.substr(colon + 1, x - colon - 1));
      l.out_ch = std::stoi(tok.substr(x + 1));
      spec.layers.push_back(l);
    } else {
      throw FormatError("arch: unknown token '" + tok + "'");
    }
  }
  if (!have_in || !have_mode) throw FormatError("arch: missing in=/mode= in '" + line + "'");
  spec.validate();
  return spec;
}

ArchSpec build_default_arch(int channels, HeadMode mode) {
  using K = ArchSpec::LayerSpec::Kind;
  ArchSpec spec;
  spec.input_channels = channels;
  spec.mode = mode;
  const int head = mode == HeadMode::regression ? 1 : 5;
  spec.layers = {
      {K::conv, 3, channels, 32}, {K::conv, 3, 32, 64},   {K::pool, 0, 0, 0},
      {K::conv, 3, 64, 128},      {K::conv, 3, 128, 128}, {K::pool, 0, 0, 0},
      {K::conv, 3, 128, 128},     {K::conv, 1, 128, 64},  {K::conv, 1, 64, head},
  };
  spec.validate();
  return spec;
}

ArchSpec build_narrow_arch(int channels, HeadMode mode, int width) {
  using K = ArchSpec::LayerSpec::Kind;
  ArchSpec spec;
  spec.input_channels = channels;
  spec.mode = mode;
  const int head = mode == HeadMode::regression ? 1 : 5;
  const int w = width;
  spec.layers = {
      {K::conv, 3, channels, w}, {K::conv, 3, w, w}, {K::pool, 0, 0, 0},
      {K::conv, 3, w, w},        {K::conv, 3, w, w}, {K::pool, 0, 0, 0},
      {K::conv, 3, w, w},        {K::conv, 1, w, w}, {K::conv, 1, w, head},
  };
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// QfNet
// ---------------------------------------------------------------------------

QfNet::QfNet(ArchSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng = Rng(init_seed).child("qfnet-init");

  int conv_index = 0, pool_index = 0;
  const int n_convs = 7;
  for (const auto& l : spec_.layers) {
    if (l.kind == ArchSpec::LayerSpec::Kind::pool) {
      ++pool_index;
      auto pool = std::make_unique<nn::MaxPool2>();
      layers_.push_back(std::move(pool));
      continue;
    }
    ++conv_index;
    auto conv = std::make_unique<nn::Conv2d>(l.in_ch, l.out_ch, l.k, 1, 0);
    conv->init_he(rng);
    conv->register_params(params_, "conv" + std::to_string(conv_index));
    layers_.push_back(std::move(conv));
    if (conv_index < n_convs) {
      auto bn = std::make_unique<nn::BatchNorm2d>(l.out_ch);
      bn->register_params(params_, "bn" + std::to_string(conv_index));
      layers_.push_back(std::move(bn));
      layers_.push_back(std::make_unique<nn::ReLU>());
    }
  }
  if (spec_.mode == HeadMode::regression) {
    layers_.push_back(std::make_unique<nn::Sigmoid>());
  }
}

void QfNet::check_input(const Shape4& in) const {
  if (in.c != spec_.input_channels) {
    throw DimensionError("qfnet: input has " + std::to_string(in.c) + " channels, expected " +
                         std::to_string(spec_.input_channels));
  }
  const int min_side = spec_.min_input_side();
  if (in.h < min_side || in.w < min_side) {
    throw DimensionError("qfnet: input " + std::to_string(in.h) + "x" + std::to_string(in.w) +
                         " smaller than the minimum " + std::to_string(min_side) + "x" +
                         std::to_string(min_side));
  }
}

Tensor QfNet::forward(const Tensor& input, nn::Mode mode) {
  check_input(input.shape());
  Tensor x = input;
  for (auto& l : layers_) x = l->forward(x, mode);
  return x;
}

Tensor QfNet::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

Tensor QfNet::infer(const Tensor& input) const {
  check_input(input.shape());
  Tensor x = input;
  for (const auto& l : layers_) x = l->infer(x);
  return x;
}

std::vector<Tensor> QfNet::infer_collect(const Tensor& input) const {
  check_input(input.shape());
  std::vector<Tensor> acts;
  Tensor x = input;
  for (const auto& l : layers_) {
    x = l->infer(x);
    acts.push_back(x);
  }
  return acts;
}

void QfNet::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& l : layers_) {
    if (auto* conv = dynamic_cast<nn::Conv2d*>(l.get())) conv->frozen = frozen;
    if (auto* bn = dynamic_cast<nn::BatchNorm2d*>(l.get())) bn->frozen = frozen;
  }
}

int QfNet::layer_out_channels(int index) const {
  if (index < 0 || index >= static_cast<int>(layers_.size())) {
    throw RangeError("layer index " + std::to_string(index) + " outside [0, " +
                     std::to_string(layers_.size()) + ")");
  }
  // walk the spec shape function up to the requested layer
  Shape4 s{1, spec_.input_channels, spec_.min_input_side(), spec_.min_input_side()};
  for (int i = 0; i <= index; ++i) s = layers_[i]->out_shape(s);
  return s.c;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'Q', 'F', 'P', 'R', 'E', 'D', '0', '1'};

void write_f32_le(std::ostream& out, const float* data, std::int64_t count) {
  std::vector<unsigned char> buf(static_cast<std::size_t>(count) * 4);
  for (std::int64_t i = 0; i < count; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    buf[4 * i + 0] = static_cast<unsigned char>(bits);
    buf[4 * i + 1] = static_cast<unsigned char>(bits >> 8);
    buf[4 * i + 2] = static_cast<unsigned char>(bits >> 16);
    buf[4 * i + 3] = static_cast<unsigned char>(bits >> 24);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void read_f32_le(const unsigned char* src, float* dst, std::int64_t count) {
  for (std::int64_t i = 0; i < count; ++i) {
    const std::uint32_t bits = std::uint32_t(src[4 * i]) | (std::uint32_t(src[4 * i + 1]) << 8) |
                               (std::uint32_t(src[4 * i + 2]) << 16) |
                               (std::uint32_t(src[4 * i + 3]) << 24);
    std::memcpy(&dst[i], &bits, 4);
  }
}

}  // namespace

void CheckpointMeta::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : kv) {
    if (k == key) {
      v = value;
      return;
    }
  }
  kv.emplace_back(key, value);
}

const std::string* CheckpointMeta::get(const std::string& key) const {
  for (const auto& [k, v] : kv) {
    if (k == key) return &v;
  }
  return nullptr;
}

void save_checkpoint(const QfNet& net, const CheckpointMeta& meta, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, 8);
  out << "\nversion 1\n";
  out << "arch " << net.spec().serialize() << "\n";
  out << "normalized_input 1\n";
  for (const auto& [k, v] : meta.kv) out << "meta " << k << " " << v << "\n";
  std::int64_t offset = 0;
  for (const auto& p : net.params().params()) {
    out << "param " << p.name << " " << p.tensor->size() << " " << offset << "\n";
    offset += p.tensor->size() * 4;
  }
  out << "blob_bytes " << offset << "\n";
  out << "end_header\n";
  for (const auto& p : net.params().params()) {
    write_f32_le(out, p.tensor->data(), p.tensor->size());
  }
  if (!out) throw IoError("write failed for " + path);
}

QfNet load_checkpoint(const std::string& path, CheckpointMeta* meta_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 9 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw FormatError("checkpoint: bad magic in " + path);
  }

  // header is newline-terminated text up to the end_header line
  std::size_t pos = 9;  // past magic + newline
  std::string arch_line;
  CheckpointMeta meta;
  struct DirEntry {
    std::string name;
    std::int64_t count;
    std::int64_t offset;
  };
  std::vector<DirEntry> dir;
  std::int64_t blob_bytes = -1;
  bool header_done = false;
  int version = -1;

  while (pos < bytes.size()) {
    const auto nl = std::find(bytes.begin() + pos, bytes.end(), '\n');
    if (nl == bytes.end()) break;
    const std::string line(bytes.begin() + pos, nl);
    pos = static_cast<std::size_t>(nl - bytes.begin()) + 1;
    if (line == "end_header") {
      header_done = true;
      break;
    }
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "version") {
      is >> version;
    } else if (key == "arch") {
      arch_line = line.substr(5);
    } else if (key == "normalized_input") {
      // always 1 in version 1
    } else if (key == "meta") {
      std::string mk;
      is >> mk;
      std::string rest;
      std::getline(is, rest);
      if (!rest.empty() && rest.front() == ' ') rest.erase(0, 1);
      meta.kv.emplace_back(mk, rest);
    } else if (key == "param") {
      DirEntry e;
      is >> e.name >> e.count >> e.offset;
      dir.push_back(e);
    } else if (key == "blob_bytes") {
      is >> blob_bytes;
    } else {
      throw FormatError("checkpoint: unknown header line '" + line + "' in " + path);
    }
  }
  if (!header_done) throw FormatError("checkpoint: header truncated in " + path);
  if (version != 1) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " in " +
                      path + " (this build reads version 1)");
  }
  if (arch_line.empty()) throw FormatError("checkpoint: missing arch line in " + path);

  QfNet net(ArchSpec::parse(arch_line), 0);

  std::int64_t expected = 0;
  for (const auto& e : dir) expected += e.count * 4;
  if (blob_bytes != expected) {
    throw FormatError("checkpoint: blob_bytes " + std::to_string(blob_bytes) +
                      " does not match directory total " + std::to_string(expected));
  }
  const std::int64_t available = static_cast<std::int64_t>(bytes.size() - pos);
  if (available != blob_bytes) {
    throw FormatError("checkpoint: blob length mismatch, expected " +
                      std::to_string(blob_bytes) + " bytes (" + std::to_string(blob_bytes / 4) +
                      " floats), found " + std::to_string(available) + " bytes in " + path);
  }

  std::size_t loaded = 0;
  for (const auto& e : dir) {
    nn::ParamRef* p = net.params().find(e.name);
    if (!p) throw FormatError("checkpoint: unknown parameter '" + e.name + "' in " + path);
    if (p->tensor->size() != e.count) {
      throw FormatError("checkpoint: parameter '" + e.name + "' expects " +
                        std::to_string(p->tensor->size()) + " floats, directory has " +
                        std::to_string(e.count));
    }
    read_f32_le(bytes.data() + pos + e.offset, p->tensor->data(), e.count);
    ++loaded;
  }
  if (loaded != net.params().params().size()) {
    throw FormatError("checkpoint: directory lists " + std::to_string(loaded) +
                      " parameters, model has " +
                      std::to_string(net.params().params().size()));
  }
  if (meta_out) *meta_out = meta;
  return net;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double accuracy_at_002(const std::vector<std::pair<double, double>>& pairs) {
  if (pairs.empty()) throw RangeError("accuracy_at_002: empty pair list is undefined");
  std::int64_t hits = 0;
  for (const auto& [y, yp] : pairs) {
    if (std::abs(y - yp) <= 0.02) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

void MetricsReport::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "step,train_loss,val_loss,"
      << (mode == HeadMode::regression ? "accuracy_at_002" : "class_accuracy") << "\n";
  for (const auto& e : val_curve) {
    out << e.step << "," << e.train_loss << "," << e.val_loss << ","
        << (mode == HeadMode::regression ? e.accuracy002 : e.class_accuracy) << "\n";
  }
}

void MetricsReport::write_json(const std::string& path) const {
  json j;
  j["mode"] = to_string(mode);
  j["train_curve"] = json::array();
  for (const auto& [step, loss] : train_curve) j["train_curve"].push_back({step, loss});
  j["val_curve"] = json::array();
  for (const auto& e : val_curve) {
    j["val_curve"].push_back({{"step", e.step},
                              {"train_loss", e.train_loss},
                              {"val_loss", e.val_loss},
                              {"accuracy_at_002", e.accuracy002},
                              {"class_accuracy", e.class_accuracy}});
  }
  j["pairs"] = json::array();
  for (const auto& [y, yp] : pairs) j["pairs"].push_back({y, yp});
  if (mode == HeadMode::classification) {
    j["confusion"] = confusion;
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

ValSet build_val_set(const CorpusManifest& manifest, ColorSpace color, HeadMode mode,
                     int patch_size, int count, std::uint64_t seed) {
  Rng rng = Rng(seed).child("val-set");
  const auto val_indices = manifest.indices(Split::val);
  if (val_indices.empty()) throw Error("build_val_set: manifest has no val split");

  std::vector<int> pool;
  for (int idx : val_indices) {
    const ImageBuffer& img = manifest.image(idx, color);
    if (img.width >= patch_size && img.height >= patch_size) pool.push_back(idx);
  }
  if (pool.empty()) throw Error("build_val_set: no val image fits the patch size");

  const int channels = color == ColorSpace::gray ? 1 : 3;
  ValSet vs;
  vs.mode = mode;
  vs.inputs = Tensor(Shape4{count, channels, patch_size, patch_size});
  const jpeg::ColorMode jmode = jpeg_mode_for(color);
  const std::int64_t plane = static_cast<std::int64_t>(patch_size) * patch_size;

  for (int i = 0; i < count; ++i) {
    int q, cls = -1;
    if (mode == HeadMode::classification) {
      cls = i % 5;
      q = kClassQ[cls];
    } else {
      // stratified grid over [1, 100]
      q = 1 + static_cast<int>(std::lround(99.0 * i / std::max(1, count - 1)));
    }
    const int img_idx = pool[rng.below(static_cast<std::uint32_t>(pool.size()))];
    const ImageBuffer& img = manifest.image(img_idx, color);
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint32_t>(img.width - patch_size + 1)));
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint32_t>(img.height - patch_size + 1)));
    const ImageBuffer degraded = jpeg::jpeg_degrade(crop(img, x0, y0, patch_size, patch_size),
                                                    jpeg::QualityFactor(q), jmode);
    float* dst = vs.inputs.data() + vs.inputs.index(i, 0, 0, 0);
    for (int y = 0; y < patch_size; ++y) {
      for (int x = 0; x < patch_size; ++x) {
        for (int c = 0; c < channels; ++c) {
          dst[c * plane + y * patch_size + x] = static_cast<float>(degraded.at(y, x, c)) / 255.0f;
        }
      }
    }
    vs.ys.push_back(static_cast<float>(q) / 100.0f);
    vs.classes.push_back(cls);
  }
  return vs;
}

ValEval evaluate(const QfNet& net, const ValSet& vs) {
  const Shape4& s = vs.inputs.shape();
  const int chunk = 16;
  ValEval ev;
  double loss_acc = 0.0;
  std::int64_t loss_cells = 0;
  std::int64_t class_hits = 0, class_total = 0;

  for (int b0 = 0; b0 < s.n; b0 += chunk) {
    const int b1 = std::min(s.n, b0 + chunk);
    Tensor batch(Shape4{b1 - b0, s.c, s.h, s.w});
    std::memcpy(batch.data(), vs.inputs.data() + vs.inputs.index(b0, 0, 0, 0),
                sizeof(float) * static_cast<std::size_t>(batch.size()));
    const Tensor out = net.infer(batch);
    const Shape4& os = out.shape();
    const std::int64_t cells = static_cast<std::int64_t>(os.h) * os.w;

    for (int b = b0; b < b1; ++b) {
      const int lb = b - b0;
      const double y = vs.ys[b];
      if (vs.mode == HeadMode::regression) {
        double mean = 0.0;
        for (int yy = 0; yy < os.h; ++yy) {
          for (int xx = 0; xx < os.w; ++xx) {
            const double pred = out.at(lb, 0, yy, xx);
            ev.cell_pairs.emplace_back(y, pred);
            loss_acc += (pred - y) * (pred - y);
            mean += pred;
          }
        }
        loss_cells += cells;
        ev.patch_pairs.emplace_back(y, mean / static_cast<double>(cells));
      } else {
        const int truth = vs.classes[b];
        double mean_cells[5] = {0, 0, 0, 0, 0};
        for (int yy = 0; yy < os.h; ++yy) {
          for (int xx = 0; xx < os.w; ++xx) {
            // per-cell argmax and per-cell cross entropy
            double mx = out.at(lb, 0, yy, xx);
            int arg = 0;
            for (int c = 1; c < 5; ++c) {
              const double v = out.at(lb, c, yy, xx);
              if (v > mx) {
                mx = v;
                arg = c;
              }
            }
            double lse = 0.0;
            for (int c = 0; c < 5; ++c) lse += std::exp(out.at(lb, c, yy, xx) - mx);
            loss_acc += -(out.at(lb, truth, yy, xx) - mx - std::log(lse));
            ev.confusion[truth][arg] += 1;
            class_hits += (arg == truth) ? 1 : 0;
            ++class_total;
            for (int c = 0; c < 5; ++c) mean_cells[c] += out.at(lb, c, yy, xx);
          }
        }
        loss_cells += cells;
        // patch-level prediction: argmax of mean logits
        int arg = 0;
        for (int c = 1; c < 5; ++c) {
          if (mean_cells[c] > mean_cells[arg]) arg = c;
        }
        ev.patch_pairs.emplace_back(truth, arg);
      }
    }
  }
  ev.loss = loss_cells > 0 ? loss_acc / static_cast<double>(loss_cells) : 0.0;
  if (class_total > 0) {
    ev.class_accuracy = static_cast<double>(class_hits) / static_cast<double>(class_total);
  }
  return ev;
}

namespace {

std::vector<std::vector<float>> snapshot_params(const nn::ParamStore& store) {
  std::vector<std::vector<float>> snap;
  for (const auto& p : store.params()) {
    snap.emplace_back(p.tensor->data(), p.tensor->data() + p.tensor->size());
  }
  return snap;
}

void restore_params(nn::ParamStore& store, const std::vector<std::vector<float>>& snap) {
  for (std::size_t i = 0; i < snap.size(); ++i) {
    std::copy(snap[i].begin(), snap[i].end(), store.params()[i].tensor->data());
  }
}

}  // namespace

MetricsReport train_qf(QfNet& net, const CorpusManifest& manifest, const QFSampler& sampler,
                       ColorSpace color, const TrainHyper& hyper) {
  const HeadMode mode = net.spec().mode;
  if (manifest.indices(Split::train).empty()) throw Error("train: manifest has no train split");

  Rng root(hyper.seed);
  Rng batch_rng = root.child("batches", static_cast<std::uint64_t>(hyper.start_step));
  const ValSet val =
      build_val_set(manifest, color, mode, hyper.patch_size, hyper.val_patch_count, hyper.seed);

  nn::OptimizerConfig opt;
  opt.kind = hyper.optimizer;
  opt.lr = static_cast<float>(hyper.lr);

  MetricsReport report;
  report.mode = mode;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_snap;
  std::int64_t best_step = -1;

  const Shape4 out_shape = net.spec().map_shape(
      Shape4{hyper.batch_size, net.spec().input_channels, hyper.patch_size, hyper.patch_size});
  const std::int64_t cells_per_patch = static_cast<std::int64_t>(out_shape.h) * out_shape.w;

  for (std::int64_t step = hyper.start_step + 1; step <= hyper.start_step + hyper.steps; ++step) {
    PatchBatch batch = make_patch_batch(manifest, Split::train, sampler, hyper.patch_size,
                                        hyper.batch_size, color, batch_rng);
    Tensor out = net.forward(batch.input, nn::Mode::train);
    Tensor grad(out.shape());
    double loss;
    if (mode == HeadMode::regression) {
      Tensor target(out.shape());
      for (int b = 0; b < hyper.batch_size; ++b) {
        float* t = target.data() + target.index(b, 0, 0, 0);
        std::fill(t, t + cells_per_patch, batch.targets_y[b]);
      }
      loss = nn::mse_loss(out, target, &grad);
    } else {
      std::vector<int> cell_targets;
      cell_targets.reserve(static_cast<std::size_t>(hyper.batch_size) * cells_per_patch);
      for (int b = 0; b < hyper.batch_size; ++b) {
        cell_targets.insert(cell_targets.end(), cells_per_patch, batch.targets_class[b]);
      }
      loss = nn::cross_entropy_loss(out, cell_targets, &grad);
    }

    if (!std::isfinite(loss)) {
      if (!hyper.diverged_snapshot_path.empty()) {
        CheckpointMeta meta;
        meta.set("diverged_at_step", std::to_string(step));
        save_checkpoint(net, meta, hyper.diverged_snapshot_path);
      }
      throw NumericError("train: loss became non-finite at step " + std::to_string(step) +
                         (hyper.diverged_snapshot_path.empty()
                              ? ""
                              : ", snapshot written to " + hyper.diverged_snapshot_path));
    }

    net.backward(grad);
    nn::optimizer_step(net.params(), opt);
    report.train_curve.emplace_back(step, loss);

    if (step % hyper.val_interval == 0 || step == hyper.start_step + hyper.steps) {
      const ValEval ev = evaluate(net, val);
      EvalPoint pt;
      pt.step = step;
      pt.train_loss = loss;
      pt.val_loss = ev.loss;
      if (mode == HeadMode::regression) pt.accuracy002 = accuracy_at_002(ev.cell_pairs);
      pt.class_accuracy = ev.class_accuracy;
      report.val_curve.push_back(pt);
      if (hyper.verbose) {
        std::cout << "step " << step << " train_loss " << loss << " val_loss " << ev.loss
                  << (mode == HeadMode::regression
                          ? " acc@0.02 " + std::to_string(pt.accuracy002)
                          : " class_acc " + std::to_string(ev.class_accuracy))
                  << std::endl;
      }
      if (ev.loss < best_val) {
        best_val = ev.loss;
        best_snap = snapshot_params(net.params());
        best_step = step;
      }
    }
  }

  if (!best_snap.empty()) restore_params(net.params(), best_snap);

  // final metrics describe the returned (best-validation) parameters
  const ValEval final_ev = evaluate(net, val);
  if (mode == HeadMode::regression) {
    report.pairs = final_ev.cell_pairs;
  }
  report.confusion = final_ev.confusion;
  if (hyper.verbose) {
    std::cout << "best val_loss " << best_val << " at step " << best_step << std::endl;
  }
  return report;
}

}  // namespace qfpred

#include "facedet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace facedet {

// ---- image io ----------------------------------------------------------------

namespace {

int read_pnm_token(std::istream& in, const std::string& path) {
  // skips whitespace and # comments
  while (true) {
    int c = in.peek();
    if (c == EOF) throw DataError(path + ": truncated PNM header");
    if (c == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    if (std::isspace(c)) {
      in.get();
      continue;
    }
    break;
  }
  int value = 0;
  if (!(in >> value)) throw DataError(path + ": malformed PNM header");
  return value;
}

}  // namespace

Tensor read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open image file");
  char p = 0, kind = 0;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '5' && kind != '6'))
    throw DataError(path + ": expected binary PGM (P5) or PPM (P6)");
  const int channels = kind == '5' ? 1 : 3;
  const int w = read_pnm_token(in, path);
  const int h = read_pnm_token(in, path);
  const int maxval = read_pnm_token(in, path);
  if (maxval != 255) throw DataError(path + ": only maxval 255 is supported");
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw DataError(path + ": truncated pixel data");

  Tensor img = Tensor::zeros({channels, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        img.data()[(static_cast<std::size_t>(c) * h + y) * w + x] =
            raw[(static_cast<std::size_t>(y) * w + x) * channels + c] / 255.0;
  return img;
}

void write_image(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3 || (image.dim(0) != 1 && image.dim(0) != 3))
    throw std::invalid_argument("write_image: expected (1|3,H,W) tensor, got " +
                                shape_str(image.shape()));
  const int channels = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  out << (channels == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c) {
        const double v = image.data()[(static_cast<std::size_t>(c) * h + y) * w + x];
        const double clamped = std::min(1.0, std::max(0.0, v));
        raw[(static_cast<std::size_t>(y) * w + x) * channels + c] =
            static_cast<unsigned char>(std::lround(clamped * 255.0));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

// ---- resize / pad --------------------------------------------------------------

Tensor bilinear_resize(const Tensor& image, int out_h, int out_w) {
  if (image.ndim() != 3)
    throw std::invalid_argument("bilinear_resize: expected (C,H,W), got " +
                                shape_str(image.shape()));
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_resize: output must be positive");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (out_h == h && out_w == w) return image.clone();
  Tensor out = Tensor::zeros({c, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int ch = 0; ch < c; ++ch) {
    const Scalar* src = image.data() + static_cast<std::size_t>(ch) * h * w;
    Scalar* dst = out.data() + static_cast<std::size_t>(ch) * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const double fy = std::min(static_cast<double>(h) - 1.0,
                                 std::max(0.0, (y + 0.5) * sy - 0.5));
      const int y0 = static_cast<int>(fy);
      const int y1 = std::min(y0 + 1, h - 1);
      const double wy = fy - y0;
      for (int x = 0; x < out_w; ++x) {
        const double fx = std::min(static_cast<double>(w) - 1.0,
                                   std::max(0.0, (x + 0.5) * sx - 0.5));
        const int x0 = static_cast<int>(fx);
        const int x1 = std::min(x0 + 1, w - 1);
        const double wx = fx - x0;
        const double top = src[static_cast<std::size_t>(y0) * w + x0] * (1 - wx) +
                           src[static_cast<std::size_t>(y0) * w + x1] * wx;
        const double bot = src[static_cast<std::size_t>(y1) * w + x0] * (1 - wx) +
                           src[static_cast<std::size_t>(y1) * w + x1] * wx;
        dst[static_cast<std::size_t>(y) * out_w + x] = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

ResizeResult resize_shorter_side(const Tensor& image, const std::vector<Box>& boxes, int target) {
  if (target <= 0) throw std::invalid_argument("resize_shorter_side: target must be positive");
  const int h = image.dim(1), w = image.dim(2);
  const int shorter = std::min(h, w);
  const double scale = static_cast<double>(target) / shorter;
  int out_h, out_w;
  if (h <= w) {
    out_h = target;
    out_w = std::max(1, static_cast<int>(std::lround(w * scale)));
  } else {
    out_w = target;
    out_h = std::max(1, static_cast<int>(std::lround(h * scale)));
  }
  ResizeResult r;
  r.scale = scale;
  r.image = (out_h == h && out_w == w) ? image : bilinear_resize(image, out_h, out_w);
  r.boxes = boxes;
  for (Box& b : r.boxes) {
    b.x1 *= scale;
    b.y1 *= scale;
    b.x2 *= scale;
    b.y2 *= scale;
  }
  return r;
}

Tensor pad_to_multiple(const Tensor& image, int multiple) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int ph = (h + multiple - 1) / multiple * multiple;
  const int pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return image;
  Tensor out = Tensor::zeros({c, ph, pw});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      std::copy_n(image.data() + (static_cast<std::size_t>(ch) * h + y) * w, w,
                  out.data() + (static_cast<std::size_t>(ch) * ph + y) * pw);
  return out;
}

// ---- synthetic data --------------------------------------------------------------

namespace {

void draw_ellipse(Tensor& img, double cx, double cy, double rx, double ry, double value) {
  const int h = img.dim(1), w = img.dim(2);
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - ry)));
  const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + ry)));
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - rx)));
  const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + rx)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5 - cx) / rx;
      const double dy = (y + 0.5 - cy) / ry;
      const double rho2 = dx * dx + dy * dy;
      if (rho2 <= 1.0)  // slight radial falloff keeps the blob non-flat
        img.data()[static_cast<std::size_t>(y) * w + x] = value * (1.0 - 0.2 * rho2);
    }
  }
}

void draw_rect(Tensor& img, double x1, double y1, double x2, double y2, double value) {
  const int h = img.dim(1), w = img.dim(2);
  const int yy0 = std::max(0, static_cast<int>(std::floor(y1)));
  const int yy1 = std::min(h - 1, static_cast<int>(std::ceil(y2) - 1));
  const int xx0 = std::max(0, static_cast<int>(std::floor(x1)));
  const int xx1 = std::min(w - 1, static_cast<int>(std::ceil(x2) - 1));
  for (int y = yy0; y <= yy1; ++y)
    for (int x = xx0; x <= xx1; ++x)
      img.data()[static_cast<std::size_t>(y) * w + x] = value;
}

Tensor textured_background(int size, double noise_amplitude, Rng& rng) {
  // coarse random grid upsampled bilinearly, plus white noise
  const int grid = size / 16 + 2;
  Tensor coarse = Tensor::zeros({1, grid, grid});
  for (std::size_t i = 0; i < coarse.numel(); ++i) coarse.data()[i] = rng.uniform(0.2, 0.5);
  Tensor img = bilinear_resize(coarse, size, size);
  for (std::size_t i = 0; i < img.numel(); ++i) {
    const double v = img.data()[i] + rng.uniform(-noise_amplitude, noise_amplitude);
    img.data()[i] = std::min(1.0, std::max(0.0, v));
  }
  return img;
}

}  // namespace

void synth_generate(const SynthConfig& cfg, const std::string& out_dir) {
  if (cfg.count < 0 || cfg.image_size < 32)
    throw std::invalid_argument("synth_generate: need count >= 0 and image_size >= 32");
  if (cfg.max_face_size > cfg.image_size)
    throw std::invalid_argument("synth_generate: max face size exceeds image size");
  if (cfg.min_face_size <= 0 || cfg.min_face_size > cfg.max_face_size)
    throw std::invalid_argument("synth_generate: invalid face size range");

  fs::create_directories(fs::path(out_dir) / "images");
  std::ofstream ann(fs::path(out_dir) / "annotations.jsonl");
  if (!ann) throw DataError(out_dir + ": cannot write annotations.jsonl");

  Rng master(cfg.seed);
  for (int i = 0; i < cfg.count; ++i) {
    Rng rng = master.split(static_cast<uint64_t>(i));
    Tensor img = textured_background(cfg.image_size, cfg.noise_amplitude, rng);

    const int n_faces = cfg.min_faces + rng.uniform_int(cfg.max_faces - cfg.min_faces + 1);
    std::vector<Box> boxes;
    for (int f = 0; f < n_faces; ++f) {
      Box box;
      bool placed = false;
      for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
        const double size = rng.uniform(cfg.min_face_size, cfg.max_face_size);
        const double aspect = rng.uniform(1.0, 1.5);  // height:width, face-like
        const double bw = size / std::sqrt(aspect);
        const double bh = size * std::sqrt(aspect);
        if (bw > cfg.image_size || bh > cfg.image_size) continue;
        const double cx = rng.uniform(bw / 2, cfg.image_size - bw / 2);
        const double cy = rng.uniform(bh / 2, cfg.image_size - bh / 2);
        box = {cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2};
        placed = true;
        for (const Box& other : boxes)
          if (iou(box, other) > 0.25) placed = false;
      }
      if (!placed) continue;

      const double brightness = rng.uniform(0.75, 0.95);
      draw_ellipse(img, box.cx(), box.cy(), box.width() / 2, box.height() / 2, brightness);
      if (rng.uniform() < cfg.occlusion_prob) {
        // partial occluder: a dark rectangle over a random edge of the face
        const double frac = rng.uniform(0.25, 0.5);
        const double dark = rng.uniform(0.02, 0.25);
        const int side = rng.uniform_int(4);
        Box occ = box;
        if (side == 0) occ.x2 = box.x1 + box.width() * frac;        // left
        else if (side == 1) occ.x1 = box.x2 - box.width() * frac;   // right
        else if (side == 2) occ.y2 = box.y1 + box.height() * frac;  // top
        else occ.y1 = box.y2 - box.height() * frac;                 // bottom
        draw_rect(img, occ.x1, occ.y1, occ.x2, occ.y2, dark);
      }
      boxes.push_back(box);
    }

    std::ostringstream name;
    name << std::setw(6) << std::setfill('0') << i << ".pgm";
    const std::string rel = "images/" + name.str();
    write_image((fs::path(out_dir) / rel).string(), img);

    json line;
    line["image"] = rel;
    json jboxes = json::array();
    for (const Box& b : boxes) jboxes.push_back({b.x1, b.y1, b.x2, b.y2});
    line["boxes"] = jboxes;
    ann << line.dump() << "\n";
  }
}

// ---- loading --------------------------------------------------------------------

std::vector<Sample> load_dataset(const std::string& dir) {
  const fs::path ann_path = fs::path(dir) / "annotations.jsonl";
  std::ifstream ann(ann_path);
  if (!ann) throw DataError(ann_path.string() + ": cannot open annotations");

  std::vector<Sample> samples;
  std::string line;
  int line_no = 0;
  while (std::getline(ann, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = ann_path.string() + ":" + std::to_string(line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(where + ": malformed JSON record: " + e.what());
    }
    if (!rec.is_object() || !rec.contains("image") || !rec.contains("boxes"))
      throw DataError(where + ": record must have 'image' and 'boxes' fields");

    Sample s;
    s.source = rec["image"].get<std::string>();
    const fs::path img_path = fs::path(dir) / s.source;
    if (!fs::exists(img_path)) throw DataError(where + ": missing image file " + img_path.string());
    s.image = read_image(img_path.string());
    const double w = s.image.dim(2), h = s.image.dim(1);

    for (const auto& jb : rec["boxes"]) {
      if (!jb.is_array() || jb.size() != 4)
        throw DataError(where + ": box must be [x1,y1,x2,y2]");
      Box b{jb[0].get<double>(), jb[1].get<double>(), jb[2].get<double>(), jb[3].get<double>()};
      if (b.x2 <= b.x1 || b.y2 <= b.y1)
        throw DataError(where + ": degenerate box [" + std::to_string(b.x1) + "," +
                        std::to_string(b.y1) + "," + std::to_string(b.x2) + "," +
                        std::to_string(b.y2) + "]");
      if (b.x1 < 0 || b.y1 < 0 || b.x2 > w || b.y2 > h)
        throw DataError(where + ": box outside image bounds");
      s.boxes.push_back(b);
    }
    samples.push_back(std::move(s));
  }
  std::sort(samples.begin(), samples.end(),
            [](const Sample& a, const Sample& b) { return a.source < b.source; });
  return samples;
}

// ---- augmentation ------------------------------------------------------------------

Sample random_crop(const Sample& sample, const CropConfig& cfg, Rng& rng) {
  if (!(cfg.min_fraction > 0 && cfg.min_fraction <= cfg.max_fraction && cfg.max_fraction <= 1.0))
    throw std::invalid_argument("random_crop: fractions must satisfy 0 < min <= max <= 1");
  if (rng.uniform() >= cfg.probability) return sample;

  const int h = sample.image.dim(1), w = sample.image.dim(2);
  const double shorter = std::min(h, w);
  const double side = rng.uniform(cfg.min_fraction, cfg.max_fraction) * shorter;
  const double x0 = rng.uniform(0.0, w - side);
  const double y0 = rng.uniform(0.0, h - side);

  Sample out;
  out.source = sample.source;

  // resample the crop window back to the original resolution
  const int c = sample.image.dim(0);
  out.image = Tensor::zeros({c, h, w});
  const double sy = side / h, sx = side / w;
  for (int ch = 0; ch < c; ++ch) {
    const Scalar* src = sample.image.data() + static_cast<std::size_t>(ch) * h * w;
    Scalar* dst = out.image.data() + static_cast<std::size_t>(ch) * h * w;
    for (int y = 0; y < h; ++y) {
      const double fy = std::min(static_cast<double>(h) - 1.0,
                                 std::max(0.0, y0 + (y + 0.5) * sy - 0.5));
      const int yy0 = static_cast<int>(fy);
      const int yy1 = std::min(yy0 + 1, h - 1);
      const double wy = fy - yy0;
      for (int x = 0; x < w; ++x) {
        const double fx = std::min(static_cast<double>(w) - 1.0,
                                   std::max(0.0, x0 + (x + 0.5) * sx - 0.5));
        const int xx0 = static_cast<int>(fx);
        const int xx1 = std::min(xx0 + 1, w - 1);
        const double wx = fx - xx0;
        const double top = src[static_cast<std::size_t>(yy0) * w + xx0] * (1 - wx) +
                           src[static_cast<std::size_t>(yy0) * w + xx1] * wx;
        const double bot = src[static_cast<std::size_t>(yy1) * w + xx0] * (1 - wx) +
                           src[static_cast<std::size_t>(yy1) * w + xx1] * wx;
        dst[static_cast<std::size_t>(y) * w + x] = top * (1 - wy) + bot * wy;
      }
    }
  }

  const double scale_x = w / side, scale_y = h / side;
  for (const Box& b : sample.boxes) {
    const double cx = b.cx(), cy = b.cy();
    if (cx < x0 || cx >= x0 + side || cy < y0 || cy >= y0 + side) continue;  // center outside
    Box nb{std::max(0.0, (b.x1 - x0)) * scale_x, std::max(0.0, (b.y1 - y0)) * scale_y,
           std::min(side, (b.x2 - x0)) * scale_x, std::min(side, (b.y2 - y0)) * scale_y};
    if (nb.width() > 1e-9 && nb.height() > 1e-9) out.boxes.push_back(nb);
  }
  return out;
}

}  // namespace facedet

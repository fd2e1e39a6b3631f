#ifndef FACEDET_DATA_HPP
#define FACEDET_DATA_HPP

#include <stdexcept>
#include <string>
#include <vector>

#include "facedet/geometry.hpp"
#include "facedet/rng.hpp"
#include "facedet/tensor.hpp"

namespace facedet {

// Dataset-level failures (missing files, malformed records); the CLI maps
// these to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Sample {
  Tensor image;  // (C,H,W), values in [0,1]
  std::vector<Box> boxes;
  std::string source;
};

struct SynthConfig {
  int image_size = 128;
  int count = 300;
  int min_faces = 1;
  int max_faces = 5;
  double min_face_size = 12.0;
  double max_face_size = 96.0;
  double noise_amplitude = 0.1;
  double occlusion_prob = 0.0;  // chance a face gets a partial occluder
  uint64_t seed = 7;
};

struct CropConfig {
  double probability = 0.5;
  double min_fraction = 0.3;  // of the shorter side
  double max_fraction = 1.0;
};

// Grayscale images with filled ellipses on textured noise; annotations are
// the ellipse bounding boxes. Writes images/NNNNNN.pgm + annotations.jsonl;
// byte-identical across runs for a fixed config.
void synth_generate(const SynthConfig& cfg, const std::string& out_dir);

// Samples ordered lexicographically by image path. Malformed records are
// rejected with file/line diagnostics.
std::vector<Sample> load_dataset(const std::string& dir);

// Square crop, boxes kept iff their centers lie inside, clipped, then the
// crop is resized back to the sample's resolution. With probability
// (1 - cfg.probability) the sample is returned unchanged.
Sample random_crop(const Sample& sample, const CropConfig& cfg, Rng& rng);

struct ResizeResult {
  Tensor image;
  std::vector<Box> boxes;
  double scale = 1.0;
};

ResizeResult resize_shorter_side(const Tensor& image, const std::vector<Box>& boxes, int target);

// Zero-pads bottom/right; box coordinates are unaffected.
Tensor pad_to_multiple(const Tensor& image, int multiple = 128);

Tensor bilinear_resize(const Tensor& image, int out_h, int out_w);

// Binary PGM (P5) / PPM (P6), maxval 255; pixel v maps to v/255.
Tensor read_image(const std::string& path);
void write_image(const std::string& path, const Tensor& image);

}  // namespace facedet

#endif  // FACEDET_DATA_HPP

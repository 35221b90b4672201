#pragma once

#include "edpose/geometry.hpp"
#include "edpose/rng.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace edpose {

/// One image with its annotated people. The image is a flattened
/// (height*width) x 3 RGB matrix in [0,1], rows scanning y-major; boxes and
/// keypoints are normalized fractions of the CURRENT image size.
struct ImageSample {
    Mat image;
    int height = 0;
    int width = 0;
    std::vector<GtInstance> instances;
    std::string image_id;
};

struct DatasetSpec {
    enum class Source { coco_json, synthetic };
    enum class Split { train, val };
    Source source = Source::synthetic;
    Split split = Split::train;
    int k = 17;
    std::string path;        // coco_json: annotation file
    std::uint64_t seed = 7;  // synthetic: generator stream
    int n_images = 64;
    int people_min = 1;
    int people_max = 3;
    int image_size = 128;
};

/// Left/right keypoint index swap applied under horizontal flip. Built-ins
/// cover the 17- and 14-point layouts; anything else is a ConfigError.
std::vector<int> builtin_flip_permutation(int k);

/// Reads a symmetry table file: {"k": int, "pairs": [[left, right], ...]}.
std::vector<int> load_flip_table(const std::string& path);

/// Parses a COCO-format keypoint annotation file. Pixel coordinates become
/// normalized fractions; crowd annotations and instances with no visible
/// keypoint are dropped; annotations are grouped per image in file order.
/// Image pixels load from file_name next to the JSON when present, else the
/// sample is black. expected_k > 0 enforces the keypoint count.
std::vector<ImageSample> load_coco_keypoints(const std::string& json_path, int expected_k = -1);

/// Mirrors image and annotations about the vertical axis and swaps
/// left/right keypoint indices by the given permutation.
ImageSample flip_horizontal(const ImageSample& s, const std::vector<int>& permutation);

/// Restricts the sample to a normalized window (snapped to the pixel grid).
/// Instances whose box center leaves the window are dropped; keypoints that
/// leave it are downgraded to invisible; boxes are clipped then renormalized.
ImageSample crop_window(const ImageSample& s, double x0, double y0, double cw, double ch);

/// Bilinear resample to the given size; normalized annotations are unchanged.
ImageSample resize_image(const ImageSample& s, int out_h, int out_w);

struct AugmentConfig {
    double flip_prob = 0.5;
    double crop_prob = 0.8;
    double crop_min = 0.7;  // smallest window fraction per axis
    int resize_min = 128;   // shorter-side range; outputs snap to multiples of 32
    int resize_max = 192;
    std::vector<int> flip_permutation;  // empty: builtin table when K is 14 or 17
};

/// Random flip + window crop + shorter-side resize.
ImageSample augment(const ImageSample& s, Rng& rng, const AugmentConfig& cfg = {});

/// Renders a scene of articulated stick figures on a black background with a
/// distinct color per limb. Keypoints are the exact joint positions; each box
/// is the keypoint hull plus a margin. Fully deterministic in the rng stream.
ImageSample synth_scene(Rng& rng, int n_people, int k, int image_size = 128);

/// Materializes spec.n_images scenes from spec.seed (val split offsets the
/// stream so the two splits never share a scene).
std::vector<ImageSample> synth_dataset(const DatasetSpec& spec);

/// Samples padded to a common size with per-sample validity masks
/// ((h*w) x 1, 1 = real pixel); annotations are renormalized to the padded
/// canvas; instance lists stay ragged.
struct Batch {
    std::vector<ImageSample> samples;
    std::vector<Mat> masks;
    int height = 0;
    int width = 0;
};

class Batcher {
  public:
    Batcher(std::vector<ImageSample> samples, int batch_size, std::uint64_t shuffle_seed,
            bool shuffle = true);

    std::optional<Batch> next();
    /// Rewinds and reorders for the given epoch (same epoch, same order).
    void reset(std::uint64_t epoch = 0);
    int n_batches() const;

  private:
    std::vector<ImageSample> samples_;
    std::vector<int> order_;
    int batch_size_ = 1;
    std::size_t cursor_ = 0;
    std::uint64_t seed_ = 0;
    bool shuffle_ = true;
};

}  // namespace edpose

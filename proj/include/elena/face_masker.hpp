#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "elena/image.hpp"
#include "elena/types.hpp"

namespace elena {

struct Point2 {
    float x = 0;
    float y = 0;
    bool operator==(const Point2&) const = default;
};

struct FaceRegion {
    Rect rect;
    double confidence = 1.0;
    std::optional<std::array<Point2, 5>> landmarks;
    bool operator==(const FaceRegion&) const = default;
};

struct MaskSpec {
    Rgb mask_color{0, 0, 0};
    double confidence_threshold = 0.5;
    int max_faces = 20;
    int box_margin = 0;

    // Throws InvalidArgument unless 0 < threshold < 1, max_faces >= 1 and
    // box_margin >= 0.
    void validate() const;
};

struct DetectionSet {
    std::string image_id;
    std::vector<FaceRegion> faces;
    std::string detector_id;
    bool operator==(const DetectionSet&) const = default;
};

Json to_json(const DetectionSet& d);
// `source` is used in diagnostics only.
DetectionSet detection_from_json(const Json& j, const std::string& source = "<json>");

// Reads {image_id, faces:[{x,y,w,h,confidence}]}; confidence defaults to 1.0.
// Throws Error(Parse) naming the line or field at fault.
DetectionSet load_external_boxes(const std::filesystem::path& path);

// I_m(x,y) = mask_color inside the union of margin-expanded face rects,
// clipped to the image; the original pixel everywhere else.
Image mask_image(const Image& image, const DetectionSet& detections, const MaskSpec& spec);

// --- YuNet-style decoding -------------------------------------------------

// Raw head outputs for one feature stride, flattened row-major over the
// (input_h / stride) x (input_w / stride) grid.
struct StrideOutputs {
    std::vector<float> cls;   // 1 per cell
    std::vector<float> obj;   // 1 per cell
    std::vector<float> bbox;  // 4 per cell: dx, dy, log w, log h
    std::vector<float> kps;   // 10 per cell: five (dx, dy) landmark offsets
};

struct Candidate {
    float x = 0;  // top-left, detector input pixels
    float y = 0;
    float w = 0;
    float h = 0;
    float score = 0;
    std::array<Point2, 5> landmarks{};
};

inline constexpr std::array<int, 3> kYuNetStrides = {8, 16, 32};

// Decodes grid-point priors: score = sqrt(clamp(cls) * clamp(obj)), centre =
// (col + dx, row + dy) * stride, size = exp(log size) * stride. Keeps
// candidates with score >= score_threshold. Throws Error(Inference) when a
// tensor does not match the grid implied by the input size.
std::vector<Candidate> decode_yunet(const std::map<int, StrideOutputs>& outputs, int input_w, int input_h,
                                    float score_threshold);

float candidate_iou(const Candidate& a, const Candidate& b);

// Greedy non-maximum suppression. Returns kept indices in descending score
// order; equal scores keep input order.
std::vector<std::size_t> nms(const std::vector<Candidate>& candidates, float iou_threshold);

// NMS, max_faces truncation (lowest confidence dropped first) and rescaling
// from detector input space to an image of image_w x image_h.
DetectionSet finalize_detections(const std::vector<Candidate>& candidates, const MaskSpec& spec,
                                 float nms_iou_threshold, int input_w, int input_h, int image_w, int image_h,
                                 std::string image_id, std::string detector_id);

struct DetectorOptions {
    int input_width = 320;
    int input_height = 320;
    float nms_iou_threshold = 0.3f;
};

// ONNX face detector with YuNet's twelve-head output layout (cls/obj/bbox/kps
// at strides 8, 16, 32). Not thread-safe; use one instance per worker.
class FaceDetector {
public:
    FaceDetector(const std::filesystem::path& model_path, DetectorOptions options = {});
    ~FaceDetector();
    FaceDetector(FaceDetector&&) noexcept;
    FaceDetector& operator=(FaceDetector&&) noexcept;

    DetectionSet detect(const Image& image, const MaskSpec& spec, const std::string& image_id);
    const std::string& detector_id() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace elena

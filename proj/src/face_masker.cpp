#include "elena/face_masker.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>
#include <opencv2/imgproc.hpp>

#include "elena/assets.hpp"
#include "elena/error.hpp"

namespace elena {

void MaskSpec::validate() const {
    if (!(confidence_threshold > 0.0 && confidence_threshold < 1.0)) {
        fail(ErrorCode::InvalidArgument, "confidence_threshold must lie strictly between 0 and 1");
    }
    if (max_faces < 1) fail(ErrorCode::InvalidArgument, "max_faces must be at least 1");
    if (box_margin < 0) fail(ErrorCode::InvalidArgument, "box_margin must be nonnegative");
}

Json to_json(const DetectionSet& d) {
    Json faces = Json::array();
    for (const auto& f : d.faces) {
        Json face = to_json(f.rect);
        face["confidence"] = f.confidence;
        if (f.landmarks) {
            Json pts = Json::array();
            for (const auto& p : *f.landmarks) pts.push_back({p.x, p.y});
            face["landmarks"] = pts;
        }
        faces.push_back(face);
    }
    return Json{{"image_id", d.image_id}, {"detector_id", d.detector_id}, {"faces", faces}};
}

DetectionSet detection_from_json(const Json& j, const std::string& source) {
    auto bad = [&](const std::string& field, const std::string& what) -> void {
        fail(ErrorCode::Parse, source + ": " + field + ": " + what);
    };
    if (!j.is_object()) bad("<root>", "expected an object");
    DetectionSet d;
    if (!j.contains("image_id") || !j.at("image_id").is_string()) bad("image_id", "missing or not a string");
    d.image_id = j.at("image_id").get<std::string>();
    d.detector_id = j.value("detector_id", "external");
    if (!j.contains("faces") || !j.at("faces").is_array()) bad("faces", "missing or not an array");
    const auto& faces = j.at("faces");
    for (std::size_t i = 0; i < faces.size(); ++i) {
        const auto& f = faces[i];
        const std::string prefix = "faces[" + std::to_string(i) + "]";
        if (!f.is_object()) bad(prefix, "expected an object");
        FaceRegion region;
        for (const char* k : {"x", "y", "w", "h"}) {
            if (!f.contains(k) || !f.at(k).is_number()) bad(prefix + "." + k, "missing or not a number");
        }
        region.rect = {static_cast<int>(std::lround(f.at("x").get<double>())),
                       static_cast<int>(std::lround(f.at("y").get<double>())),
                       static_cast<int>(std::lround(f.at("w").get<double>())),
                       static_cast<int>(std::lround(f.at("h").get<double>()))};
        if (region.rect.w <= 0) bad(prefix + ".w", "width must be positive");
        if (region.rect.h <= 0) bad(prefix + ".h", "height must be positive");
        if (f.contains("confidence")) {
            if (!f.at("confidence").is_number()) bad(prefix + ".confidence", "not a number");
            region.confidence = f.at("confidence").get<double>();
            if (region.confidence < 0.0 || region.confidence > 1.0) {
                bad(prefix + ".confidence", "must lie in [0, 1]");
            }
        }
        if (f.contains("landmarks")) {
            const auto& pts = f.at("landmarks");
            if (!pts.is_array() || pts.size() != 5) bad(prefix + ".landmarks", "expected five points");
            std::array<Point2, 5> lm{};
            for (std::size_t p = 0; p < 5; ++p) {
                lm[p] = {pts[p].at(0).get<float>(), pts[p].at(1).get<float>()};
            }
            region.landmarks = lm;
        }
        d.faces.push_back(region);
    }
    return d;
}

DetectionSet load_external_boxes(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        const auto offset = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n');
        fail(ErrorCode::Parse, path.string() + ":" + std::to_string(line) + ": malformed JSON");
    }
    auto d = detection_from_json(j, path.string());
    d.detector_id = "external";
    return d;
}

Image mask_image(const Image& image, const DetectionSet& detections, const MaskSpec& spec) {
    Image out = image;
    const Rect bounds{0, 0, image.width, image.height};
    for (const auto& face : detections.faces) {
        const Rect expanded{face.rect.x - spec.box_margin, face.rect.y - spec.box_margin,
                            face.rect.w + 2 * spec.box_margin, face.rect.h + 2 * spec.box_margin};
        const Rect r = intersect(expanded, bounds);
        for (int y = r.y; y < r.y + r.h; ++y) {
            for (int x = r.x; x < r.x + r.w; ++x) out.set(x, y, spec.mask_color);
        }
    }
    return out;
}

std::vector<Candidate> decode_yunet(const std::map<int, StrideOutputs>& outputs, int input_w, int input_h,
                                    float score_threshold) {
    std::vector<Candidate> out;
    for (int stride : kYuNetStrides) {
        auto it = outputs.find(stride);
        if (it == outputs.end()) fail(ErrorCode::Inference, "missing outputs for stride " + std::to_string(stride));
        const auto& t = it->second;
        const int cols = input_w / stride;
        const int rows = input_h / stride;
        const auto cells = static_cast<std::size_t>(rows) * cols;
        if (t.cls.size() != cells || t.obj.size() != cells || t.bbox.size() != cells * 4 ||
            t.kps.size() != cells * 10) {
            fail(ErrorCode::Inference, "tensor shape mismatch at stride " + std::to_string(stride));
        }
        const auto s = static_cast<float>(stride);
        for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
                const auto idx = static_cast<std::size_t>(r) * cols + c;
                const float cls = std::clamp(t.cls[idx], 0.0f, 1.0f);
                const float obj = std::clamp(t.obj[idx], 0.0f, 1.0f);
                const float score = std::sqrt(cls * obj);
                if (score < score_threshold) continue;
                Candidate cand;
                const float cx = (static_cast<float>(c) + t.bbox[idx * 4 + 0]) * s;
                const float cy = (static_cast<float>(r) + t.bbox[idx * 4 + 1]) * s;
                cand.w = std::exp(t.bbox[idx * 4 + 2]) * s;
                cand.h = std::exp(t.bbox[idx * 4 + 3]) * s;
                cand.x = cx - cand.w / 2.0f;
                cand.y = cy - cand.h / 2.0f;
                cand.score = score;
                for (std::size_t n = 0; n < 5; ++n) {
                    cand.landmarks[n] = {(t.kps[idx * 10 + 2 * n] + static_cast<float>(c)) * s,
                                         (t.kps[idx * 10 + 2 * n + 1] + static_cast<float>(r)) * s};
                }
                out.push_back(cand);
            }
        }
    }
    return out;
}

float candidate_iou(const Candidate& a, const Candidate& b) {
    const float x0 = std::max(a.x, b.x);
    const float y0 = std::max(a.y, b.y);
    const float x1 = std::min(a.x + a.w, b.x + b.w);
    const float y1 = std::min(a.y + a.h, b.y + b.h);
    const float inter = std::max(0.0f, x1 - x0) * std::max(0.0f, y1 - y0);
    const float uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0f ? inter / uni : 0.0f;
}

std::vector<std::size_t> nms(const std::vector<Candidate>& candidates, float iou_threshold) {
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return candidates[a].score > candidates[b].score; });
    std::vector<std::size_t> kept;
    for (auto idx : order) {
        const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
            return candidate_iou(candidates[k], candidates[idx]) > iou_threshold;
        });
        if (!suppressed) kept.push_back(idx);
    }
    return kept;
}

DetectionSet finalize_detections(const std::vector<Candidate>& candidates, const MaskSpec& spec,
                                 float nms_iou_threshold, int input_w, int input_h, int image_w, int image_h,
                                 std::string image_id, std::string detector_id) {
    spec.validate();
    std::vector<Candidate> eligible;
    for (const auto& c : candidates) {
        if (c.score >= spec.confidence_threshold) eligible.push_back(c);
    }
    auto kept = nms(eligible, nms_iou_threshold);
    if (kept.size() > static_cast<std::size_t>(spec.max_faces)) kept.resize(static_cast<std::size_t>(spec.max_faces));

    const double sx = static_cast<double>(image_w) / input_w;
    const double sy = static_cast<double>(image_h) / input_h;
    const Rect bounds{0, 0, image_w, image_h};
    DetectionSet out{std::move(image_id), {}, std::move(detector_id)};
    for (auto idx : kept) {
        const auto& c = eligible[idx];
        const long x0 = std::lround(c.x * sx);
        const long y0 = std::lround(c.y * sy);
        const long x1 = std::lround((c.x + c.w) * sx);
        const long y1 = std::lround((c.y + c.h) * sy);
        const Rect r = intersect({static_cast<int>(x0), static_cast<int>(y0), static_cast<int>(x1 - x0),
                                  static_cast<int>(y1 - y0)},
                                 bounds);
        if (r.w <= 0 || r.h <= 0) continue;
        FaceRegion face{r, c.score, std::array<Point2, 5>{}};
        for (std::size_t n = 0; n < 5; ++n) {
            (*face.landmarks)[n] = {static_cast<float>(c.landmarks[n].x * sx),
                                    static_cast<float>(c.landmarks[n].y * sy)};
        }
        out.faces.push_back(face);
    }
    return out;
}

struct FaceDetector::Impl {
    cv::dnn::Net net;
    DetectorOptions options;
    std::string id;
    std::vector<std::string> output_names;
};

FaceDetector::FaceDetector(const std::filesystem::path& model_path, DetectorOptions options)
    : impl_(std::make_unique<Impl>()) {
    if (options.input_width <= 0 || options.input_height <= 0 || options.input_width % 32 != 0 ||
        options.input_height % 32 != 0) {
        fail(ErrorCode::InvalidArgument, "detector input size must be a positive multiple of 32");
    }
    if (!std::filesystem::exists(model_path)) {
        fail(ErrorCode::ModelLoad, "detector model not found: " + model_path.string());
    }
    try {
        impl_->net = cv::dnn::readNetFromONNX(model_path.string());
    } catch (const cv::Exception& e) {
        fail(ErrorCode::ModelLoad, "cannot load detector model " + model_path.string() + ": " + e.what());
    }
    if (impl_->net.empty()) fail(ErrorCode::ModelLoad, "detector model is empty: " + model_path.string());
    impl_->net.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
    impl_->net.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
    impl_->options = options;
    impl_->id = "yunet:" + model_path.filename().string();
    for (const char* head : {"cls", "obj", "bbox", "kps"}) {
        for (int stride : kYuNetStrides) impl_->output_names.push_back(std::string(head) + "_" + std::to_string(stride));
    }
}

FaceDetector::~FaceDetector() = default;
FaceDetector::FaceDetector(FaceDetector&&) noexcept = default;
FaceDetector& FaceDetector::operator=(FaceDetector&&) noexcept = default;

const std::string& FaceDetector::detector_id() const { return impl_->id; }

DetectionSet FaceDetector::detect(const Image& image, const MaskSpec& spec, const std::string& image_id) {
    spec.validate();
    if (image.empty()) fail(ErrorCode::InvalidArgument, "cannot run detection on an empty image");
    const auto& opt = impl_->options;

    cv::Mat rgb(image.height, image.width, CV_8UC3, const_cast<std::uint8_t*>(image.rgb.data()));
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    cv::Mat resized;
    cv::resize(bgr, resized, cv::Size(opt.input_width, opt.input_height), 0, 0, cv::INTER_LINEAR);
    const cv::Mat blob = cv::dnn::blobFromImage(resized, 1.0, cv::Size(), cv::Scalar(), false, false, CV_32F);

    std::vector<cv::Mat> raw;
    try {
        impl_->net.setInput(blob);
        impl_->net.forward(raw, impl_->output_names);
    } catch (const cv::Exception& e) {
        fail(ErrorCode::Inference, std::string("detector forward pass failed: ") + e.what());
    }
    if (raw.size() != impl_->output_names.size()) fail(ErrorCode::Inference, "unexpected detector output count");

    std::map<int, StrideOutputs> outputs;
    auto flat = [](const cv::Mat& m) {
        if (m.depth() != CV_32F || !m.isContinuous()) {
            fail(ErrorCode::Inference, "detector outputs must be contiguous float32 tensors");
        }
        const auto* p = m.ptr<float>();
        return std::vector<float>(p, p + m.total());
    };
    for (std::size_t s = 0; s < kYuNetStrides.size(); ++s) {
        auto& o = outputs[kYuNetStrides[s]];
        o.cls = flat(raw[s]);
        o.obj = flat(raw[s + 3]);
        o.bbox = flat(raw[s + 6]);
        o.kps = flat(raw[s + 9]);
    }
    const auto candidates = decode_yunet(outputs, opt.input_width, opt.input_height,
                                         static_cast<float>(spec.confidence_threshold));
    return finalize_detections(candidates, spec, opt.nms_iou_threshold, opt.input_width, opt.input_height,
                               image.width, image.height, image_id, impl_->id);
}

}  // namespace elena

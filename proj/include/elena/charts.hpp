#pragma once

#include <filesystem>

#include "elena/eval.hpp"
#include "elena/image.hpp"

namespace elena {

// Deterministic raster charts for a report bundle.
Image confusion_chart(const EvaluationReport& report);
Image per_category_chart(const EvaluationReport& report);
Image region_chart(const EvaluationReport& report);

}  // namespace elena

#include <algorithm>

#include "dagan/boxes.hpp"

namespace dagan {

double iou(const BoundingBox& a, const BoundingBox& b) {
    a.validate();
    b.validate();
    const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

BoundingBox mask_to_bbox(const std::vector<std::uint8_t>& mask, int h, int w) {
    if (static_cast<std::size_t>(h) * w != mask.size()) throw ConfigError("mask_to_bbox: size mismatch");
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask[static_cast<std::size_t>(y) * w + x]) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) throw ConfigError("mask_to_bbox: empty mask");
    return {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1 + 1),
            static_cast<double>(y1 + 1)};
}

}  // namespace dagan

#pragma once

#include <cstdint>
#include <vector>

#include "dagan/common.hpp"

namespace dagan {

// Half-open pixel box [x_min, x_max) x [y_min, y_max), origin top-left,
// x = column. Area is therefore exactly the number of covered pixels for
// integer coordinates.
struct BoundingBox {
    double x_min = 0, y_min = 0, x_max = 0, y_max = 0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    double cx() const { return 0.5 * (x_min + x_max); }
    double cy() const { return 0.5 * (y_min + y_max); }
    void validate() const {
        if (!(x_min < x_max && y_min < y_max)) throw ConfigError("degenerate bounding box");
    }
};

double iou(const BoundingBox& a, const BoundingBox& b);

struct BoxAnnotation {
    int class_id = 0;
    BoundingBox box;
};

struct Detection {
    int class_id = 0;
    double score = 0.0;
    BoundingBox box;
};

// Tightest half-open box around the foreground of a row-major h×w mask.
BoundingBox mask_to_bbox(const std::vector<std::uint8_t>& mask, int h, int w);

}  // namespace dagan

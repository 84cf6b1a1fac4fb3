#pragma once

namespace deal {

// Axis-aligned box in pixels: top-left corner plus extent.
struct Box {
    double x = 0.0;
    double y = 0.0;
    double w = 0.0;
    double h = 0.0;

    double cx() const { return x + 0.5 * w; }
    double cy() const { return y + 0.5 * h; }
    double right() const { return x + w; }
    double bottom() const { return y + h; }
    double area() const { return w * h; }
    bool contains(double px, double py) const { return px > x && px < x + w && py > y && py < y + h; }

    friend bool operator==(const Box&, const Box&) = default;
};

// Center-size box normalized by image width/height.
struct NormalizedBox {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    friend bool operator==(const NormalizedBox&, const NormalizedBox&) = default;
};

inline Box to_pixels(const NormalizedBox& b, double image_w, double image_h) {
    return Box{(b.cx - 0.5 * b.w) * image_w, (b.cy - 0.5 * b.h) * image_h, b.w * image_w, b.h * image_h};
}

inline NormalizedBox normalize(const Box& b, double image_w, double image_h) {
    return NormalizedBox{b.cx() / image_w, b.cy() / image_h, b.w / image_w, b.h / image_h};
}

}  // namespace deal

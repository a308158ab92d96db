#include <safe/ndarray.hpp>

#include <sstream>

namespace safe {

Index shape_size(const Shape& shape) {
    Index n = 1;
    for (auto d : shape) {
        if (d < 0) throw ShapeError("shape", {shape}, "negative extent in shape " + shape_string(shape));
        n *= d;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

ShapeError::ShapeError(std::string op, std::vector<std::vector<std::ptrdiff_t>> shapes, const std::string& what)
    : Error(what), op_(std::move(op)), shapes_(std::move(shapes)) {}

}  // namespace safe

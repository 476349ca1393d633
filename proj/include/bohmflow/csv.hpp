#pragma once

#include <cstdio>
#include <string>

namespace bohmflow {

// All numeric CSV output uses 17 significant digits (full double precision).
inline std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace bohmflow

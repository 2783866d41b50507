#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace nflab {

// 17 significant digits: enough for doubles to round-trip exactly through
// decimal text, which the CSV/report contracts rely on.
inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::string> split(const std::string& s, char sep);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace nflab

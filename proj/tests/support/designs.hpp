#pragma once

#include <string>

#include "wpgsd/design_io.hpp"

namespace golden {

inline std::string path(const std::string& name) { return std::string(WPGSD_SOURCE_DIR) + "/designs/" + name; }

inline wpgsd::DesignSpec design(const std::string& name) { return wpgsd::load_design(path(name)); }

inline wpgsd::DesignSpec example1() { return design("example1.json"); }
inline wpgsd::DesignSpec example1_bh() { return design("example1_bh.json"); }
inline wpgsd::DesignSpec example2() { return design("example2.json"); }
inline wpgsd::DesignSpec a6() { return design("a6.json"); }

}  // namespace golden

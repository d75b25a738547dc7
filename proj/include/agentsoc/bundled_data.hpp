#pragma once

#include <string_view>

// Default data files compiled into the library (see data/).
namespace agentsoc::bundled {

std::string_view techniques_json();
std::string_view technique_mapping_json();
std::string_view rsem_calibration_json();

}  // namespace agentsoc::bundled

#pragma once

#include <string>

namespace abtok {

enum class log_level { error = 0, info = 1, debug = 2 };

// Level comes from ABTOK_LOG (error|info|debug), default info.
log_level current_log_level();

void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace abtok

#include "abtok/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace abtok {

log_level current_log_level() {
    static log_level level = [] {
        const char* env = std::getenv("ABTOK_LOG");
        if (env == nullptr) return log_level::info;
        if (std::strcmp(env, "error") == 0) return log_level::error;
        if (std::strcmp(env, "debug") == 0) return log_level::debug;
        return log_level::info;
    }();
    return level;
}

static void emit(const char* tag, const std::string& msg) {
    std::fprintf(stderr, "[abtok %s] %s\n", tag, msg.c_str());
}

void log_error(const std::string& msg) {
    emit("error", msg);
}

void log_info(const std::string& msg) {
    if (current_log_level() >= log_level::info) emit("info", msg);
}

void log_debug(const std::string& msg) {
    if (current_log_level() >= log_level::debug) emit("debug", msg);
}

}  // namespace abtok

#include "ubct/errors.hpp"

namespace ubct {

ConfigError::ConfigError(std::string field, const std::string& what)
    : Error("invalid configuration '" + field + "': " + what), field_(std::move(field)) {}

StageError::StageError(std::string stage, const std::string& what)
    : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}

}  // namespace ubct

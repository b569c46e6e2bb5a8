#pragma once

#include "semsam/error.hpp"

namespace misground {

using semsam::FormatError;
using semsam::IoError;
using semsam::ValidationError;

}  // namespace misground

#pragma once

#include <httplib.h>

// <resolv.h>, pulled in by httplib, defines `_res` as a macro, which breaks
// any later header using that identifier (Eigen does).
#undef _res

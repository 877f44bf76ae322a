#pragma once

#include "gingr/benchmark.hpp"
#include "gingr/config.hpp"
#include "gingr/correspondence.hpp"
#include "gingr/errors.hpp"
#include "gingr/geometry.hpp"
#include "gingr/gp_io.hpp"
#include "gingr/gpmm.hpp"
#include "gingr/kernels.hpp"
#include "gingr/mesh_io.hpp"
#include "gingr/metrics.hpp"
#include "gingr/registration.hpp"
#include "gingr/spatial.hpp"
#include "gingr/synthetic.hpp"

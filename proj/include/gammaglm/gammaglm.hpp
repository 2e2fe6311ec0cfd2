#pragma once

#include "gammaglm/types.hpp"
#include "gammaglm/poisson_series.hpp"
#include "gammaglm/model_family.hpp"
#include "gammaglm/gamma_objective.hpp"
#include "gammaglm/random.hpp"
#include "gammaglm/rspg.hpp"
#include "gammaglm/mm.hpp"
#include "gammaglm/data.hpp"
#include "gammaglm/init_select.hpp"
#include "gammaglm/model_io.hpp"

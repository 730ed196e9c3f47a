#pragma once

#include "pvi/common.hpp"
#include "pvi/data.hpp"
#include "pvi/diagnostics.hpp"
#include "pvi/families.hpp"
#include "pvi/gradients.hpp"
#include "pvi/models.hpp"
#include "pvi/optimizer.hpp"
#include "pvi/param_vector.hpp"
#include "pvi/regularizers.hpp"
#include "pvi/scores.hpp"

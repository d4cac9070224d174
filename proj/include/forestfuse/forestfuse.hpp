#pragma once

#include "forestfuse/dataset.hpp"
#include "forestfuse/error.hpp"
#include "forestfuse/forest.hpp"
#include "forestfuse/importance.hpp"
#include "forestfuse/imputation.hpp"
#include "forestfuse/model.hpp"
#include "forestfuse/outlier.hpp"
#include "forestfuse/prototype.hpp"
#include "forestfuse/proximity.hpp"
#include "forestfuse/rng.hpp"
#include "forestfuse/stats.hpp"

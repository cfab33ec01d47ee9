#pragma once

#include "tagdiff/audit.hpp"
#include "tagdiff/configuration.hpp"
#include "tagdiff/cylinder.hpp"
#include "tagdiff/dynamics.hpp"
#include "tagdiff/errors.hpp"
#include "tagdiff/estimators.hpp"
#include "tagdiff/gibbs.hpp"
#include "tagdiff/io.hpp"
#include "tagdiff/pipeline.hpp"
#include "tagdiff/potential.hpp"
#include "tagdiff/run_config.hpp"
#include "tagdiff/stats.hpp"

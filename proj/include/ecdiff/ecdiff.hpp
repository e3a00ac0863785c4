#pragma once

#include "ecdiff/errors.hpp"
#include "ecdiff/tensor.hpp"
#include "ecdiff/random.hpp"
#include "ecdiff/schedule.hpp"
#include "ecdiff/predictors.hpp"
#include "ecdiff/step_log.hpp"
#include "ecdiff/trace.hpp"
#include "ecdiff/kstep.hpp"
#include "ecdiff/error_ledger.hpp"
#include "ecdiff/metrics.hpp"
#include "ecdiff/pipeline.hpp"
#include "ecdiff/search.hpp"
#include "ecdiff/config.hpp"
#include "ecdiff/report.hpp"

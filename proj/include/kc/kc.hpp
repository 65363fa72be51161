#pragma once

#include "kc/analysis.hpp"
#include "kc/attack.hpp"
#include "kc/certify.hpp"
#include "kc/csv.hpp"
#include "kc/datamodel.hpp"
#include "kc/demo.hpp"
#include "kc/dump.hpp"
#include "kc/error.hpp"
#include "kc/kcreg.hpp"
#include "kc/metrics.hpp"
#include "kc/parallel.hpp"
#include "kc/rng.hpp"
#include "kc/toynet.hpp"
#include "kc/train.hpp"
#include "kc/volatility.hpp"

#pragma once

#include "casa/array_io.hpp"
#include "casa/attention_prep.hpp"
#include "casa/config.hpp"
#include "casa/embed_prune.hpp"
#include "casa/error.hpp"
#include "casa/graph.hpp"
#include "casa/mask.hpp"
#include "casa/solver.hpp"
#include "casa/synth_bench.hpp"
#include "casa/version.hpp"

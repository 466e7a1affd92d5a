#pragma once

#include "protolearn/error.hpp"
#include "protolearn/text.hpp"
#include "protolearn/rng.hpp"
#include "protolearn/symbol.hpp"
#include "protolearn/mealy.hpp"
#include "protolearn/extended.hpp"
#include "protolearn/dot.hpp"
#include "protolearn/document.hpp"
#include "protolearn/wire.hpp"
#include "protolearn/oracle_table.hpp"
#include "protolearn/refsim.hpp"
#include "protolearn/adapter.hpp"
#include "protolearn/learner.hpp"
#include "protolearn/sat.hpp"
#include "protolearn/synthesis.hpp"
#include "protolearn/analysis.hpp"

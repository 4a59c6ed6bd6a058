#pragma once

// Umbrella header.

#include "mirage/tokenize.hpp"
#include "mirage/prompt.hpp"
#include "mirage/model.hpp"
#include "mirage/train.hpp"
#include "mirage/serialize.hpp"
#include "mirage/cti.hpp"
#include "mirage/cci.hpp"
#include "mirage/citation.hpp"
#include "mirage/eval.hpp"
#include "mirage/synth.hpp"
#include "mirage/kv.hpp"
#include "mirage/corpus.hpp"
#include "mirage/pipeline.hpp"
#include "mirage/report.hpp"

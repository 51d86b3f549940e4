#pragma once

// Umbrella header: adaptive extraction-order information extraction, end to
// end. Pull in individual headers instead when compile time matters.

#include "ordex/agent.hpp"
#include "ordex/autodiff.hpp"
#include "ordex/checkpoint.hpp"
#include "ordex/common.hpp"
#include "ordex/corpus.hpp"
#include "ordex/cotrain.hpp"
#include "ordex/encoder.hpp"
#include "ordex/env.hpp"
#include "ordex/extractor.hpp"
#include "ordex/manifest.hpp"
#include "ordex/metrics.hpp"
#include "ordex/optimizer.hpp"
#include "ordex/oracle.hpp"
#include "ordex/replay.hpp"
#include "ordex/rng.hpp"
#include "ordex/rope.hpp"
#include "ordex/span_scorer.hpp"
#include "ordex/tensor.hpp"
#include "ordex/vocab.hpp"

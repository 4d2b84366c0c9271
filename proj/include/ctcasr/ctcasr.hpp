#pragma once

#include "ctcasr/error.hpp"
#include "ctcasr/random.hpp"
#include "ctcasr/textmap.hpp"
#include "ctcasr/wav.hpp"
#include "ctcasr/features.hpp"
#include "ctcasr/corpus.hpp"
#include "ctcasr/logits.hpp"
#include "ctcasr/ctc.hpp"
#include "ctcasr/metrics.hpp"
#include "ctcasr/net.hpp"
#include "ctcasr/gradcheck.hpp"
#include "ctcasr/train.hpp"
#include "ctcasr/config.hpp"
#include "ctcasr/pipeline.hpp"
#include "ctcasr/svg.hpp"
#include "ctcasr/sweep.hpp"

#pragma once

#include "kare/checkpoint.hpp"
#include "kare/common.hpp"
#include "kare/config.hpp"
#include "kare/context_encoder.hpp"
#include "kare/corpus.hpp"
#include "kare/embedding.hpp"
#include "kare/fusion.hpp"
#include "kare/gradcheck.hpp"
#include "kare/lexicon.hpp"
#include "kare/metrics.hpp"
#include "kare/model.hpp"
#include "kare/optim.hpp"
#include "kare/pa_encoder.hpp"
#include "kare/random.hpp"
#include "kare/synth.hpp"
#include "kare/text.hpp"
#include "kare/train.hpp"

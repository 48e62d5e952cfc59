#pragma once

#include "ngstyle/core.hpp"
#include "ngstyle/corpus.hpp"
#include "ngstyle/decode.hpp"
#include "ngstyle/eval.hpp"
#include "ngstyle/harness.hpp"
#include "ngstyle/lm_source.hpp"
#include "ngstyle/ngram.hpp"
#include "ngstyle/protocol.hpp"
#include "ngstyle/scaling.hpp"
#include "ngstyle/tokenizer.hpp"

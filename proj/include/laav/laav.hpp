#pragma once

#include "laav/analysis.hpp"
#include "laav/backend.hpp"
#include "laav/config.hpp"
#include "laav/corpus.hpp"
#include "laav/error.hpp"
#include "laav/experiment.hpp"
#include "laav/mock_backend.hpp"
#include "laav/random.hpp"
#include "laav/templating.hpp"
#include "laav/text.hpp"
#include "laav/tiny/backend.hpp"
#include "laav/tiny/synthetic.hpp"
#include "laav/training.hpp"
#include "laav/verbalizers.hpp"

#pragma once

#include "promptcl/autodiff.hpp"
#include "promptcl/classifier.hpp"
#include "promptcl/continual_trainer.hpp"
#include "promptcl/dual_encoder.hpp"
#include "promptcl/encoder.hpp"
#include "promptcl/errors.hpp"
#include "promptcl/fscil_protocol.hpp"
#include "promptcl/prompt_engine.hpp"
#include "promptcl/reporting.hpp"
#include "promptcl/util.hpp"

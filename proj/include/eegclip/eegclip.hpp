#pragma once

#include "eegclip/commands.hpp"
#include "eegclip/config.hpp"
#include "eegclip/contrastive.hpp"
#include "eegclip/data_io.hpp"
#include "eegclip/dataset.hpp"
#include "eegclip/encoders.hpp"
#include "eegclip/errors.hpp"
#include "eegclip/evaluation.hpp"
#include "eegclip/interpretability.hpp"
#include "eegclip/model_io.hpp"
#include "eegclip/nn.hpp"
#include "eegclip/optim.hpp"
#include "eegclip/plot.hpp"
#include "eegclip/report_parser.hpp"
#include "eegclip/rng.hpp"
#include "eegclip/signal_pipeline.hpp"
#include "eegclip/tensor.hpp"

#pragma once

// Umbrella header: bad-pixel detection and correction for Bayer raw frames.

#include "badpix/baselines.hpp"
#include "badpix/checkpoint.hpp"
#include "badpix/common.hpp"
#include "badpix/config.hpp"
#include "badpix/corrector.hpp"
#include "badpix/defects.hpp"
#include "badpix/detector.hpp"
#include "badpix/graph.hpp"
#include "badpix/image.hpp"
#include "badpix/metrics.hpp"
#include "badpix/mlp.hpp"
#include "badpix/optim.hpp"
#include "badpix/pipeline.hpp"
#include "badpix/reconstructor.hpp"
#include "badpix/report.hpp"
#include "badpix/rng.hpp"
#include "badpix/tensor.hpp"
#include "badpix/unet.hpp"
#include "badpix/vit.hpp"

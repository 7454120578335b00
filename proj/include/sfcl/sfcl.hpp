#pragma once

#include "sfcl/autograd.hpp"
#include "sfcl/backbone.hpp"
#include "sfcl/checks.hpp"
#include "sfcl/config.hpp"
#include "sfcl/error.hpp"
#include "sfcl/freq.hpp"
#include "sfcl/fusion.hpp"
#include "sfcl/gradcheck.hpp"
#include "sfcl/io.hpp"
#include "sfcl/local_branch.hpp"
#include "sfcl/metrics.hpp"
#include "sfcl/model.hpp"
#include "sfcl/nn.hpp"
#include "sfcl/ops.hpp"
#include "sfcl/optim.hpp"
#include "sfcl/rng.hpp"
#include "sfcl/sida.hpp"
#include "sfcl/synth.hpp"
#include "sfcl/tensor.hpp"
#include "sfcl/train.hpp"

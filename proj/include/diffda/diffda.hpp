#pragma once

#include "diffda/config.hpp"
#include "diffda/denoiser.hpp"
#include "diffda/dynamics.hpp"
#include "diffda/errors.hpp"
#include "diffda/filter.hpp"
#include "diffda/guidance.hpp"
#include "diffda/hash.hpp"
#include "diffda/io.hpp"
#include "diffda/metrics.hpp"
#include "diffda/mlp.hpp"
#include "diffda/oracle.hpp"
#include "diffda/parallel.hpp"
#include "diffda/rng.hpp"
#include "diffda/sampler.hpp"
#include "diffda/schedule.hpp"
#include "diffda/svg.hpp"
#include "diffda/train.hpp"

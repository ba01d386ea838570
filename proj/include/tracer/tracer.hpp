#pragma once

#include "tracer/bayes/observation.hpp"
#include "tracer/corruption/attacker.hpp"
#include "tracer/corruption/corrupt.hpp"
#include "tracer/corruption/spec.hpp"
#include "tracer/critic/losses.hpp"
#include "tracer/critic/quantile_net.hpp"
#include "tracer/entropy/entropy.hpp"
#include "tracer/env/batch.hpp"
#include "tracer/env/collect.hpp"
#include "tracer/env/dataset.hpp"
#include "tracer/env/environments.hpp"
#include "tracer/eval/evaluate.hpp"
#include "tracer/eval/probe.hpp"
#include "tracer/eval/report.hpp"
#include "tracer/nn/autodiff.hpp"
#include "tracer/nn/checkpoint.hpp"
#include "tracer/nn/layers.hpp"
#include "tracer/nn/optim.hpp"
#include "tracer/policy/gaussian_policy.hpp"
#include "tracer/train/config.hpp"
#include "tracer/train/learner.hpp"
#include "tracer/train/run.hpp"

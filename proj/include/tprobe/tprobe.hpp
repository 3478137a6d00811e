#pragma once

#include "tprobe/rng.hpp"
#include "tprobe/tensor.hpp"
#include "tprobe/layers.hpp"
#include "tprobe/optim.hpp"
#include "tprobe/gradcheck.hpp"
#include "tprobe/models.hpp"
#include "tprobe/dataset.hpp"
#include "tprobe/perturbations.hpp"
#include "tprobe/eval.hpp"
#include "tprobe/analysis.hpp"
#include "tprobe/harness.hpp"
#include "tprobe/synth.hpp"

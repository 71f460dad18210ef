#pragma once

#include "ntklab/errors.hpp"
#include "ntklab/random.hpp"
#include "ntklab/util.hpp"
#include "ntklab/kernels.hpp"
#include "ntklab/spectral.hpp"
#include "ntklab/gp.hpp"
#include "ntklab/kgf.hpp"
#include "ntklab/network.hpp"
#include "ntklab/data.hpp"
#include "ntklab/experiments.hpp"
#include "ntklab/io.hpp"

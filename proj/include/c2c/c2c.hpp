#pragma once

#include "c2c/dataset.hpp"
#include "c2c/diagnostics.hpp"
#include "c2c/error.hpp"
#include "c2c/evaluation.hpp"
#include "c2c/fileutil.hpp"
#include "c2c/gradcheck.hpp"
#include "c2c/hsic.hpp"
#include "c2c/io.hpp"
#include "c2c/labelspace.hpp"
#include "c2c/model.hpp"
#include "c2c/optim.hpp"
#include "c2c/pipeline.hpp"
#include "c2c/rng.hpp"
#include "c2c/synthetic.hpp"
#include "c2c/tensor.hpp"
#include "c2c/training.hpp"

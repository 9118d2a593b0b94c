#pragma once

// Umbrella header.

#include "simrec/checkpoint.hpp"
#include "simrec/data.hpp"
#include "simrec/error.hpp"
#include "simrec/eval.hpp"
#include "simrec/gradcheck.hpp"
#include "simrec/hsic.hpp"
#include "simrec/io_util.hpp"
#include "simrec/matrix.hpp"
#include "simrec/model.hpp"
#include "simrec/optim.hpp"
#include "simrec/parallel.hpp"
#include "simrec/rng.hpp"
#include "simrec/trainer.hpp"

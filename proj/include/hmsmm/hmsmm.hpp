#pragma once

#include "hmsmm/special.hpp"
#include "hmsmm/covariance.hpp"
#include "hmsmm/emission.hpp"
#include "hmsmm/em.hpp"
#include "hmsmm/markov.hpp"
#include "hmsmm/inference.hpp"
#include "hmsmm/signal.hpp"
#include "hmsmm/detection.hpp"
#include "hmsmm/baselines.hpp"
#include "hmsmm/synthetic.hpp"
#include "hmsmm/io.hpp"
#include "hmsmm/crossval.hpp"
#include "hmsmm/scenario.hpp"
#include "hmsmm/cli.hpp"

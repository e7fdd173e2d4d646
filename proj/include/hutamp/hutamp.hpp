#pragma once

#include "hutamp/errors.hpp"
#include "hutamp/core_data.hpp"
#include "hutamp/io.hpp"
#include "hutamp/scalar_priors.hpp"
#include "hutamp/bigamp.hpp"
#include "hutamp/gauss_markov.hpp"
#include "hutamp/ising_mrf.hpp"
#include "hutamp/nngm_em.hpp"
#include "hutamp/baselines.hpp"
#include "hutamp/metrics.hpp"
#include "hutamp/synthetic.hpp"
#include "hutamp/turbo.hpp"
#include "hutamp/model_order.hpp"
#include "hutamp/bundle.hpp"
#include "hutamp/harness.hpp"

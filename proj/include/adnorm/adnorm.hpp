#pragma once

// Umbrella header.

#include <adnorm/climate.hpp>
#include <adnorm/config.hpp>
#include <adnorm/cutoff.hpp>
#include <adnorm/depnorm.hpp>
#include <adnorm/errors.hpp>
#include <adnorm/grf.hpp>
#include <adnorm/io.hpp>
#include <adnorm/manifest.hpp>
#include <adnorm/mle.hpp>
#include <adnorm/mlp.hpp>
#include <adnorm/normstats.hpp>
#include <adnorm/numerics.hpp>
#include <adnorm/parallel.hpp>
#include <adnorm/rng.hpp>
#include <adnorm/study.hpp>

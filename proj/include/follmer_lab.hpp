#pragma once

#include "follmer_lab/bounds.hpp"
#include "follmer_lab/error.hpp"
#include "follmer_lab/experiments.hpp"
#include "follmer_lab/follmer.hpp"
#include "follmer_lab/functionals.hpp"
#include "follmer_lab/measures.hpp"
#include "follmer_lab/numerics.hpp"
#include "follmer_lab/rng.hpp"

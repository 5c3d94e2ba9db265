#pragma once

#include "budis/error.hpp"
#include "budis/rng.hpp"
#include "budis/pg.hpp"
#include "budis/elm.hpp"
#include "budis/features.hpp"
#include "budis/model.hpp"
#include "budis/multinomial.hpp"
#include "budis/survey.hpp"
#include "budis/population.hpp"
#include "budis/sim.hpp"
#include "budis/io.hpp"

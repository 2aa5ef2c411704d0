#pragma once
// Umbrella header.

#include "matadapt/adaptor.hpp"
#include "matadapt/embedding.hpp"
#include "matadapt/errors.hpp"
#include "matadapt/evaluator.hpp"
#include "matadapt/gateway.hpp"
#include "matadapt/losses.hpp"
#include "matadapt/manifest.hpp"
#include "matadapt/matrix.hpp"
#include "matadapt/numeric.hpp"
#include "matadapt/optimizer.hpp"
#include "matadapt/pca.hpp"
#include "matadapt/ranking.hpp"
#include "matadapt/rng.hpp"
#include "matadapt/trainer.hpp"
#include "matadapt/version.hpp"

#pragma once

#include "latgen/error.hpp"
#include "latgen/latent.hpp"
#include "latgen/tensor.hpp"
#include "latgen/layers.hpp"
#include "latgen/generator.hpp"
#include "latgen/weights_io.hpp"
#include "latgen/image.hpp"
#include "latgen/hash.hpp"
#include "latgen/anchor_store.hpp"
#include "latgen/experiment.hpp"

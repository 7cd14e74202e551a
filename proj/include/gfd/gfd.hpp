#pragma once

#include "gfd/error.hpp"
#include "gfd/linalg.hpp"
#include "gfd/model.hpp"
#include "gfd/dae.hpp"
#include "gfd/synthesis.hpp"
#include "gfd/simulate.hpp"
#include "gfd/detect.hpp"
#include "gfd/config.hpp"
#include "gfd/artifact.hpp"
#include "gfd/pipeline.hpp"

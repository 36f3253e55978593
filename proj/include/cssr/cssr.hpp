#pragma once

#include "cssr/calibration.hpp"
#include "cssr/classifier.hpp"
#include "cssr/dictionary.hpp"
#include "cssr/dictionary_io.hpp"
#include "cssr/errors.hpp"
#include "cssr/experiment.hpp"
#include "cssr/image.hpp"
#include "cssr/image_io.hpp"
#include "cssr/metrics.hpp"
#include "cssr/nonlocal.hpp"
#include "cssr/parallel.hpp"
#include "cssr/phantom.hpp"
#include "cssr/reconstruct.hpp"
#include "cssr/rng.hpp"
#include "cssr/sparse.hpp"

#pragma once

#include "coughnet/adam.hpp"
#include "coughnet/audio_io.hpp"
#include "coughnet/datasets.hpp"
#include "coughnet/error.hpp"
#include "coughnet/featurize.hpp"
#include "coughnet/layers.hpp"
#include "coughnet/metrics.hpp"
#include "coughnet/model.hpp"
#include "coughnet/model_io.hpp"
#include "coughnet/tensor.hpp"
#include "coughnet/training.hpp"

#pragma once

#include "spikecp/common.hpp"
#include "spikecp/conformal.hpp"
#include "spikecp/harness.hpp"
#include "spikecp/io.hpp"
#include "spikecp/snn.hpp"
#include "spikecp/training.hpp"

#pragma once

#include "nfce/channel.hpp"
#include "nfce/classical.hpp"
#include "nfce/error.hpp"
#include "nfce/gradcheck.hpp"
#include "nfce/gradcheck_suite.hpp"
#include "nfce/io/dataset_file.hpp"
#include "nfce/io/model_file.hpp"
#include "nfce/metrics.hpp"
#include "nfce/observation.hpp"
#include "nfce/optim.hpp"
#include "nfce/racnn.hpp"
#include "nfce/sweep.hpp"
#include "nfce/train.hpp"

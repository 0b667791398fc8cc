#pragma once

// Umbrella header for the RP-DRO toolkit.

#include "rpdro/data.hpp"
#include "rpdro/evaluation.hpp"
#include "rpdro/experiment.hpp"
#include "rpdro/gradcheck.hpp"
#include "rpdro/model.hpp"
#include "rpdro/optimizer.hpp"
#include "rpdro/param_set.hpp"
#include "rpdro/report.hpp"
#include "rpdro/selection.hpp"
#include "rpdro/serialize.hpp"
#include "rpdro/sweep.hpp"
#include "rpdro/tape.hpp"
#include "rpdro/tensor.hpp"
#include "rpdro/training.hpp"
#include "rpdro/weighting.hpp"

#pragma once

#include "biascope/annotation.hpp"
#include "biascope/augmentation.hpp"
#include "biascope/count_table.hpp"
#include "biascope/dataset.hpp"
#include "biascope/detection.hpp"
#include "biascope/embedding_provider.hpp"
#include "biascope/error.hpp"
#include "biascope/evaluation.hpp"
#include "biascope/json_io.hpp"
#include "biascope/log.hpp"
#include "biascope/pipeline.hpp"
#include "biascope/rng.hpp"
#include "biascope/subprocess.hpp"
#include "biascope/synth.hpp"
#include "biascope/text.hpp"
#include "biascope/training.hpp"
#include "biascope/validate.hpp"
#include "biascope/vector_ops.hpp"

#pragma once

#include "esdid/common.hpp"
#include "esdid/panel_ingest.hpp"
#include "esdid/design_classifier.hpp"
#include "esdid/point_estimators.hpp"
#include "esdid/influence_variance.hpp"
#include "esdid/controls_adjustment.hpp"
#include "esdid/inference_tests.hpp"
#include "esdid/estimate.hpp"
#include "esdid/extensions.hpp"
#include "esdid/report.hpp"

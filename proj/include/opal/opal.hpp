#pragma once

#include "opal/error.hpp"
#include "opal/gkpo.hpp"
#include "opal/gkpo_json.hpp"
#include "opal/operator_algebra.hpp"
#include "opal/margin_engine.hpp"
#include "opal/canonical.hpp"
#include "opal/reducibility.hpp"
#include "opal/adapters.hpp"
#include "opal/harness.hpp"

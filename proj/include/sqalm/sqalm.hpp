#pragma once

// Solver library; sqalm/io.hpp additionally needs nlohmann/json.

#include "sqalm/topk.hpp"
#include "sqalm/projection.hpp"
#include "sqalm/jacobian.hpp"
#include "sqalm/model.hpp"
#include "sqalm/ssn.hpp"
#include "sqalm/alm.hpp"
#include "sqalm/instances.hpp"

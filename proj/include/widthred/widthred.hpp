#ifndef WIDTHRED_WIDTHRED_HPP
#define WIDTHRED_WIDTHRED_HPP

#include "widthred/core.hpp"
#include "widthred/linalg_oracle.hpp"
#include "widthred/losses.hpp"
#include "widthred/crude_solver.hpp"
#include "widthred/refine_solver.hpp"
#include "widthred/oracle.hpp"
#include "widthred/instance_io.hpp"

#endif  // WIDTHRED_WIDTHRED_HPP

#include "doctest.h"

#include "mvar/synthetic.hpp"

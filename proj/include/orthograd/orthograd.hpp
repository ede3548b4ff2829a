#pragma once

#include "orthograd/config.hpp"
#include "orthograd/data.hpp"
#include "orthograd/error.hpp"
#include "orthograd/eval.hpp"
#include "orthograd/linalg.hpp"
#include "orthograd/lora.hpp"
#include "orthograd/method.hpp"
#include "orthograd/net.hpp"
#include "orthograd/unlearn.hpp"

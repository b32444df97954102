#pragma once

#include "imec/channels.hpp"
#include "imec/cipher.hpp"
#include "imec/codec.hpp"
#include "imec/error.hpp"
#include "imec/harness.hpp"
#include "imec/mec.hpp"
#include "imec/prob.hpp"
#include "imec/transport.hpp"

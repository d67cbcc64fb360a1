#ifndef SPINNET_SPINNET_HPP
#define SPINNET_SPINNET_HPP

#include "spinnet/clusterdyn.hpp"
#include "spinnet/config.hpp"
#include "spinnet/constants.hpp"
#include "spinnet/errors.hpp"
#include "spinnet/fitkit.hpp"
#include "spinnet/io.hpp"
#include "spinnet/network.hpp"
#include "spinnet/protocol.hpp"
#include "spinnet/runner.hpp"
#include "spinnet/spinops.hpp"
#include "spinnet/transport.hpp"

#endif  // SPINNET_SPINNET_HPP

#pragma once

#include "poe/attack.hpp"
#include "poe/canonical.hpp"
#include "poe/crypto.hpp"
#include "poe/error.hpp"
#include "poe/event.hpp"
#include "poe/ledger.hpp"
#include "poe/net.hpp"
#include "poe/protocol.hpp"
#include "poe/scenario.hpp"
#include "poe/sim.hpp"

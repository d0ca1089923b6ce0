#pragma once

#include "proxygate/config.hpp"
#include "proxygate/environment.hpp"
#include "proxygate/experiments.hpp"
#include "proxygate/generator.hpp"
#include "proxygate/proxy.hpp"
#include "proxygate/rewards.hpp"
#include "proxygate/rng.hpp"
#include "proxygate/trainer.hpp"
#include "proxygate/types.hpp"

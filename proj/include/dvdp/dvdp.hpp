// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef DVDP_DVDP_HPP
#define DVDP_DVDP_HPP

#include "cascade.hpp"
#include "cli.hpp"
#include "config.hpp"
#include "denoiser.hpp"
#include "io.hpp"
#include "mixture.hpp"
#include "mlp.hpp"
#include "process.hpp"
#include "sampler.hpp"
#include "schedule.hpp"
#include "tensor.hpp"
#include "verify.hpp"

#endif // DVDP_DVDP_HPP

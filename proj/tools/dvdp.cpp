// SPDX-FileCopyrightText: 2026 The dvdp Authors
// SPDX-License-Identifier: Apache-2.0

#include <dvdp/cli.hpp>

int main(int argc, char** argv) { return dvdp::run_cli(argc, argv); }

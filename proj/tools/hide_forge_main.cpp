// Copyright (c) 2026, The hide-forge Authors
// SPDX-License-Identifier: Apache-2.0

#include "hide_forge/cli.hpp"

int main(int argc, char** argv) { return hide_forge::dispatch(argc, argv); }

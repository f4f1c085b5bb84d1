#pragma once

#include "fseg/commands.hpp"

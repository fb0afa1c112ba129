#ifndef KHG_KHG_HPP
#define KHG_KHG_HPP

#include <khg/cg.hpp>
#include <khg/commands.hpp>
#include <khg/csv.hpp>
#include <khg/diagnostics.hpp>
#include <khg/error.hpp>
#include <khg/forward.hpp>
#include <khg/grid.hpp>
#include <khg/inverse.hpp>
#include <khg/kernel.hpp>
#include <khg/kernel_io.hpp>
#include <khg/kernel_space.hpp>
#include <khg/lifting.hpp>
#include <khg/manifest.hpp>
#include <khg/materials.hpp>
#include <khg/operator.hpp>
#include <khg/picard.hpp>

#endif  // KHG_KHG_HPP

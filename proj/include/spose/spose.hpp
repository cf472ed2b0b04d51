#pragma once

#include "spose/adaptation.hpp"
#include "spose/alignment.hpp"
#include "spose/dataio.hpp"
#include "spose/error.hpp"
#include "spose/geometry.hpp"
#include "spose/gradcheck.hpp"
#include "spose/heatmap.hpp"
#include "spose/hmap_io.hpp"
#include "spose/losses.hpp"
#include "spose/metrics.hpp"
#include "spose/pnp.hpp"
#include "spose/synthetic.hpp"

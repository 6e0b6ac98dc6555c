#pragma once

#include "vickam/error.hpp"
#include "vickam/fft.hpp"
#include "vickam/fftcorr.hpp"
#include "vickam/io.hpp"
#include "vickam/nnhead.hpp"
#include "vickam/pgm.hpp"
#include "vickam/pipeline.hpp"
#include "vickam/prototypes.hpp"
#include "vickam/random.hpp"
#include "vickam/relmaps.hpp"
#include "vickam/synthgen.hpp"
#include "vickam/tensor.hpp"
#include "vickam/types.hpp"

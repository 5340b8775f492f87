#pragma once

#include "geodiff/checkpoint.hpp"
#include "geodiff/classifier.hpp"
#include "geodiff/config.hpp"
#include "geodiff/errors.hpp"
#include "geodiff/film.hpp"
#include "geodiff/harness.hpp"
#include "geodiff/hsi.hpp"
#include "geodiff/infer.hpp"
#include "geodiff/io_binary.hpp"
#include "geodiff/kmeans.hpp"
#include "geodiff/metrics.hpp"
#include "geodiff/nn.hpp"
#include "geodiff/render.hpp"
#include "geodiff/rng.hpp"
#include "geodiff/schedule.hpp"
#include "geodiff/tensor.hpp"
#include "geodiff/tensor_file.hpp"
#include "geodiff/tiler.hpp"
#include "geodiff/unet.hpp"

#pragma once

#include "tracemark/authorize.hpp"
#include "tracemark/degrade.hpp"
#include "tracemark/detect.hpp"
#include "tracemark/error.hpp"
#include "tracemark/harness.hpp"
#include "tracemark/image.hpp"
#include "tracemark/image_io.hpp"
#include "tracemark/manifest.hpp"
#include "tracemark/rng.hpp"
#include "tracemark/surrogate.hpp"
#include "tracemark/tokens.hpp"
#include "tracemark/watermark.hpp"
#include "tracemark/wavelet.hpp"

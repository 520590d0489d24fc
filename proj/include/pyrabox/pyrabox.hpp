#ifndef PYRABOX_PYRABOX_HPP_
#define PYRABOX_PYRABOX_HPP_

#include "pyrabox/anchors.hpp"
#include "pyrabox/annotations.hpp"
#include "pyrabox/box.hpp"
#include "pyrabox/config.hpp"
#include "pyrabox/errors.hpp"
#include "pyrabox/eval.hpp"
#include "pyrabox/gradcheck.hpp"
#include "pyrabox/image.hpp"
#include "pyrabox/loss.hpp"
#include "pyrabox/model_io.hpp"
#include "pyrabox/network.hpp"
#include "pyrabox/ops.hpp"
#include "pyrabox/sampling.hpp"
#include "pyrabox/tensor.hpp"
#include "pyrabox/train.hpp"

#endif  // PYRABOX_PYRABOX_HPP_

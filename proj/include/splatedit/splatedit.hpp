#ifndef SPLATEDIT_SPLATEDIT_HPP
#define SPLATEDIT_SPLATEDIT_HPP

#include "splatedit/adam.hpp"
#include "splatedit/camera.hpp"
#include "splatedit/common.hpp"
#include "splatedit/consistency.hpp"
#include "splatedit/finetune.hpp"
#include "splatedit/image.hpp"
#include "splatedit/loss.hpp"
#include "splatedit/obb.hpp"
#include "splatedit/parallel.hpp"
#include "splatedit/pipeline.hpp"
#include "splatedit/ply.hpp"
#include "splatedit/render.hpp"
#include "splatedit/scene_edit.hpp"
#include "splatedit/selection.hpp"
#include "splatedit/similarity.hpp"
#include "splatedit/splat.hpp"
#include "splatedit/tokens.hpp"

#endif

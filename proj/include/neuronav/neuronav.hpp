#pragma once

#include "neuronav/archive.hpp"
#include "neuronav/detect.hpp"
#include "neuronav/dicom.hpp"
#include "neuronav/error.hpp"
#include "neuronav/hash.hpp"
#include "neuronav/homography.hpp"
#include "neuronav/image.hpp"
#include "neuronav/marker.hpp"
#include "neuronav/mesh.hpp"
#include "neuronav/overlay.hpp"
#include "neuronav/phantom.hpp"
#include "neuronav/pipeline.hpp"
#include "neuronav/pose_refine.hpp"
#include "neuronav/rigid.hpp"
#include "neuronav/scene.hpp"
#include "neuronav/segmentation.hpp"
#include "neuronav/service.hpp"
#include "neuronav/text_doc.hpp"
#include "neuronav/volume.hpp"

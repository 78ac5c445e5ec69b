#pragma once

#include "casreader/error.hpp"
#include "casreader/rng.hpp"
#include "casreader/tensor.hpp"
#include "casreader/nn.hpp"
#include "casreader/sample.hpp"
#include "casreader/vocab.hpp"
#include "casreader/reader.hpp"
#include "casreader/train.hpp"
#include "casreader/datagen.hpp"
#include "casreader/dataset.hpp"
#include "casreader/eval.hpp"
#include "casreader/synth.hpp"

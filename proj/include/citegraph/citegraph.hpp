#pragma once

#include "citegraph/corpus.hpp"
#include "citegraph/embedding.hpp"
#include "citegraph/error.hpp"
#include "citegraph/evaluation.hpp"
#include "citegraph/graph.hpp"
#include "citegraph/http_clients.hpp"
#include "citegraph/index.hpp"
#include "citegraph/instructions.hpp"
#include "citegraph/latex.hpp"
#include "citegraph/metrics.hpp"
#include "citegraph/paper.hpp"
#include "citegraph/pipeline.hpp"
#include "citegraph/retriever.hpp"
#include "citegraph/service.hpp"
#include "citegraph/training.hpp"

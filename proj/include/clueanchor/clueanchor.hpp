#pragma once

// Everything except the HTTP provider, which pulls in the bundled httplib
// and is included separately by the code that actually talks to a server.

#include "clueanchor/backends.hpp"
#include "clueanchor/config.hpp"
#include "clueanchor/corpus.hpp"
#include "clueanchor/evalharness.hpp"
#include "clueanchor/kre.hpp"
#include "clueanchor/kro.hpp"
#include "clueanchor/prompting.hpp"
#include "clueanchor/reward.hpp"
#include "clueanchor/rng.hpp"
#include "clueanchor/synthetic.hpp"

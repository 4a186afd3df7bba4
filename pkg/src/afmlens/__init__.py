#!/bin/env python3

# afmlens: Model application-facing metrics from network-level metrics.
# This file is part of afmlens, licensed under the GNU GPLv3 or later.
# See <http://www.gnu.org/licenses/> for details.

ENCODING = "utf-8"
__version__ = "0.1.0"

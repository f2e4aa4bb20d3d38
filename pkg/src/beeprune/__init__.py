"""Bee-colony search over pruned channel structures.

The package splits into small pieces that compose:

* :mod:`beeprune.arch` -- architecture descriptors, channel resolution,
  FLOPs/params accounting;
* :mod:`beeprune.space` -- shrunk per-layer candidate spaces and the
  neighbour/snap operators;
* :mod:`beeprune.search` -- the employed/onlooker/scout loop with an
  append-only event history;
* :mod:`beeprune.fitness` -- fitness backends (closed-form, trainable toy
  MLP, external subprocess);
* :mod:`beeprune.replay` -- validation of stored histories;
* :mod:`beeprune.cli` -- the ``beeprune`` command.
"""

__version__ = "0.1.0"

"""OS-level support for trusted execution of obfuscated quantum circuits.

Layers, bottom-up: ``circuit`` (gates, schedules, canonical bytes),
``statevector`` (exact simulator), ``obfuscation`` (client transforms),
``crypto`` (sealing and key agreement), ``controller`` (the simulated trust
boundary), ``qos`` (intake, store, scheduler, wire protocol) and ``client``.
"""

__version__ = "0.1.0"

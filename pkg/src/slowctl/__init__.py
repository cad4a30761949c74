"""slowctl: a self-contained detector slow-control stack.

A supervisory service over a publish/subscribe field layer, driving a
simulated fleet of experiment devices, with alarms, dead-band archiving,
software interlocks, configuration management and an operator API.
"""

__version__ = "0.1.0"

"""Coordinator/worker wire protocol, transports and the in-process job runner.

Import the submodules directly (``glmd.netproto.coordinator`` etc.); this
package module stays empty so :mod:`glmd.distributed` can depend on the
transport without pulling in the coordinator.
"""

"""Wire-protocol constants.

The version string must match the client's constant byte for byte; clients
reject the handshake otherwise.
"""

PROTOCOL_VERSION = "mdlm-bridge/1"

"""Configuration management for the AVS simulator."""

import os


class Config:
    """Simulator configuration."""

    # Packet limits
    MAX_PACKET_LENGTH_BITS: int = int(
        os.getenv("AVS_MAX_PACKET_LENGTH_BITS", "12144"))
    MAX_PARSE_DEPTH: int = int(os.getenv("AVS_MAX_PARSE_DEPTH", "32"))

    # Buffer configuration
    DEFAULT_BUFFER_SIZE: int = int(
        os.getenv("AVS_DEFAULT_BUFFER_SIZE", "1048576"))
    BRE_BUFFER_SIZE: int = int(os.getenv("AVS_BRE_BUFFER_SIZE", "1024"))

    # Scheduler configuration
    SCHED_CAPACITY: int = int(os.getenv("AVS_SCHED_CAPACITY", "1024"))

    # Trace replay
    LINK_DELAY_NS: int = int(os.getenv("AVS_LINK_DELAY_NS", "0"))

    # Logging
    LOG_LEVEL: str = os.getenv("AVS_LOG_LEVEL", "WARNING").upper()

    @classmethod
    def display_config(cls):
        """Display current configuration."""
        print("Configuration:")
        print(f"  Max Packet Length: {cls.MAX_PACKET_LENGTH_BITS} bits")
        print(f"  Max Parse Depth: {cls.MAX_PARSE_DEPTH}")
        print(f"  Default Buffer Size: {cls.DEFAULT_BUFFER_SIZE} PHVs")
        print(f"  BRE Buffer Size: {cls.BRE_BUFFER_SIZE} PHVs")
        print(f"  Scheduler Capacity: {cls.SCHED_CAPACITY} PHVs per port")
        print(f"  Link Delay: {cls.LINK_DELAY_NS} ns")
        print(f"  Log Level: {cls.LOG_LEVEL}")


# Create a singleton instance
config = Config()

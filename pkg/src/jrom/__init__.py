"""Class loading, constant pool compaction and romization toolchain."""

__version__ = "0.1.0"

//! Command implementations behind the `pomcrf` binary.

//! Criterion bench targets only; see `benches/`.

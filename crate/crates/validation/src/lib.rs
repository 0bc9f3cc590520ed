//! Hosts the `acceptance` test target; run it with `cargo test -p equivar-validation --test acceptance`.

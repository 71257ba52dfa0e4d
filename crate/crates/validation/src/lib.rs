//! Acceptance checks for `weakdep`; the checks live in the `acceptance`
//! test target (`cargo test -p weakdep-validation --test acceptance`).

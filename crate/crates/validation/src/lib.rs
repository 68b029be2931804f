//! Holds the `acceptance` test target, which trains a full teacher and runs
//! the whole ablation. Kept apart from `flowlab-core` so the core suites
//! finish first in a workspace run.

//! Interaction data: loading, splitting, target selection and injection.

mod dataset;
mod inject;
mod split;
mod synthetic;
mod targets;

pub use dataset::{Dataset, DatasetStats, LoadOptions};
pub use inject::{activity_cap, fake_user_count, inject_profiles, PoisonedMatrix};
pub use split::{sample_attacker_view, split_dataset, Reassignment, Split};
pub use synthetic::SyntheticSpec;
pub use targets::{popularity_order, select_targets, Popularity, TargetSet};

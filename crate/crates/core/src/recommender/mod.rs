//! Collaborative-filtering recommender: embedding tables, LightGCN
//! propagation, BPR and alignment/uniformity losses, training and top-K.

mod conditions;
mod graph;
mod losses;
mod ranking;
mod table;
mod train;

pub use conditions::{high_activity_users, nearest_user, select_conditions, ConditionPair, ConditionPool};
pub use graph::{propagate, NormalizedGraph};
pub use losses::{
    align_loss, align_term, bpr_loss, bpr_term, l2_penalty, normalize_rows, uniform_loss, uniform_side,
};
pub use ranking::{top_k, top_k_scores};
pub(crate) use ranking::rank_order;
pub use table::{EmbeddingTable, ModelKind, TableMeta};
pub(crate) use table::{dot, Reader};
pub use train::{
    embedding_params, pretrain, pretrain_loss_on_tape, EpochLoss, RecommenderConfig, TrainedRecommender,
};

//! Metrics, repeated train/test evaluation, cross-domain testing,
//! hyperparameter search and annotation agreement.

mod agreement;
mod cross_domain;
mod cv;
mod metrics;
mod search;

pub use agreement::{
    cohens_kappa, expert_agreement, krippendorff_alpha, majority_vote, set_expert_agreement, AnnotationSet, MajorityVote,
};
pub use cross_domain::{cross_domain, CrossDomainConfig, CrossDomainMatrix, COMBINED_DOMAIN};
pub use cv::{cross_validate, CvConfig, MetricSummary, MetricsReport, SplitMode};
pub use metrics::{accuracy, auroc, binary_f1, evaluate, precision, recall, Confusion, Metric, MetricValues};
pub use search::{hyperparameter_search, param_f64, ParamDomain, Params, SearchResult, SearchSpace, Trial};

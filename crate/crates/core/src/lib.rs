//! Core domain logic for the trustnet service: who trusts and follows whom,
//! what they said about which page, and how that becomes a per-viewer page
//! status. Also home to URL cleaning and canonicalization, which decides
//! which page an assessment is about.

pub mod canon;
pub mod model;

pub use canon::{
    clean, CanonError, ConfigError, ParamMode, ParamPolicy, PolicyTable, SharedPolicies, UrlKey,
};
pub use model::{
    compute_page_status, Assessment, AssessmentId, AssessmentView, Basis, Community, FeedItem,
    ModelError, PageReport, PageStatus, PublicSource, Question, QuestionId, QuestionView,
    RelationSet, RelationTag, ShareId, ShareItem, Source, SourceId, SourceRecommendation, Status,
    Timestamp, Verdict,
};

//! Sources, relations, assessments and questions, and the per-viewer rules
//! that turn them into what a viewer sees on a page.
//!
//! Everything here is pure: a [`Community`] is an immutable-by-default snapshot
//! that the store loads and the HTTP layer queries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{PolicyTable, UrlKey};

pub type Timestamp = DateTime<Utc>;

/// Default number of source recommendations shown on a page.
pub const DEFAULT_RECOMMENDATIONS: usize = 10;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                $name(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

id_type!(
    /// Opaque identifier of a source (a user account or a news outlet).
    SourceId
);
id_type!(AssessmentId);
id_type!(QuestionId);
id_type!(ShareId);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("unknown source {0}")]
    NotFound(SourceId),
    #[error("url key {0:?} is not canonical")]
    InvalidKey(String),
    #[error("source {0} cannot trust or follow itself")]
    SelfRelation(SourceId),
    #[error("duplicate {0}")]
    Duplicate(&'static str),
    #[error("invalid question: {0}")]
    InvalidQuestion(&'static str),
    #[error("sharing requires an assessment or question on the page")]
    SharePrecondition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Source {
    pub id: SourceId,
    pub username: String,
    pub display_name: String,
    pub created_at: Timestamp,
}

/// The part of a source any other user may see.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PublicSource {
    pub id: SourceId,
    pub username: String,
    pub display_name: String,
}

impl From<&Source> for PublicSource {
    fn from(s: &Source) -> Self {
        PublicSource {
            id: s.id.clone(),
            username: s.username.clone(),
            display_name: s.display_name.clone(),
        }
    }
}

/// Who a source trusts (private) and follows (public).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RelationSet {
    pub owner_id: SourceId,
    pub trusted: BTreeSet<SourceId>,
    pub followed: BTreeSet<SourceId>,
}

impl RelationSet {
    pub fn new(owner_id: SourceId) -> Self {
        RelationSet {
            owner_id,
            trusted: BTreeSet::new(),
            followed: BTreeSet::new(),
        }
    }

    pub fn trust(&mut self, id: SourceId) -> Result<(), ModelError> {
        if id == self.owner_id {
            return Err(ModelError::SelfRelation(id));
        }
        self.trusted.insert(id);
        Ok(())
    }

    pub fn follow(&mut self, id: SourceId) -> Result<(), ModelError> {
        if id == self.owner_id {
            return Err(ModelError::SelfRelation(id));
        }
        self.followed.insert(id);
        Ok(())
    }

    fn tag_of(&self, id: &SourceId) -> Option<RelationTag> {
        if *id == self.owner_id {
            Some(RelationTag::Self_)
        } else if self.trusted.contains(id) {
            Some(RelationTag::Trusted)
        } else if self.followed.contains(id) {
            Some(RelationTag::Followed)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accurate,
    Inaccurate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Assessment {
    pub id: AssessmentId,
    pub assessor_id: SourceId,
    pub url_key: UrlKey,
    pub verdict: Verdict,
    pub rationale: Option<String>,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Question {
    pub id: QuestionId,
    pub asker_id: SourceId,
    pub url_key: UrlKey,
    pub body: Option<String>,
    pub anonymous: bool,
    /// Explicit recipients. `None` relays to the asker's trusted sources.
    pub targets: Option<BTreeSet<SourceId>>,
    pub created_at: Timestamp,
}

impl Question {
    pub fn validate(&self) -> Result<(), ModelError> {
        match &self.targets {
            Some(t) if t.is_empty() => Err(ModelError::InvalidQuestion("empty target set")),
            Some(t) if t.contains(&self.asker_id) => {
                Err(ModelError::InvalidQuestion("asker cannot target themself"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ShareItem {
    pub id: ShareId,
    pub sharer_id: SourceId,
    pub url_key: UrlKey,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Accurate,
    Inaccurate,
    SplitOpinion,
    None,
}

/// Which assessor set determined a page status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Own,
    Trusted,
    Followed,
    NoAssessment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PageStatus {
    pub status: Status,
    pub has_questions: bool,
    pub basis: Basis,
}

impl PageStatus {
    pub const UNASSESSED: PageStatus = PageStatus {
        status: Status::None,
        has_questions: false,
        basis: Basis::NoAssessment,
    };

    /// `basis = NoAssessment ⟺ status = None` and own verdicts are never split.
    pub fn is_consistent(&self) -> bool {
        let none_ok = (self.basis == Basis::NoAssessment) == (self.status == Status::None);
        let own_ok = self.basis != Basis::Own
            || matches!(self.status, Status::Accurate | Status::Inaccurate);
        none_ok && own_ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationTag {
    Trusted,
    Followed,
    #[serde(rename = "self")]
    Self_,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AssessmentView {
    pub assessment: Assessment,
    pub assessor: PublicSource,
    pub relation: RelationTag,
}

/// A question as shown to one viewer. `asker` is always empty for anonymous
/// questions; `own` tells the viewer the question is theirs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QuestionView {
    pub id: QuestionId,
    pub url_key: UrlKey,
    pub asker: Option<PublicSource>,
    pub body: Option<String>,
    pub anonymous: bool,
    pub own: bool,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SourceRecommendation {
    pub source: PublicSource,
    /// Number of sources platform-wide that trust this source.
    pub platform_trust_count: u32,
}

/// Everything the page pane needs for one URL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PageReport {
    pub url_key: UrlKey,
    pub status: Status,
    pub basis: Basis,
    pub has_questions: bool,
    pub assessments: Vec<AssessmentView>,
    pub questions: Vec<QuestionView>,
    pub recommendations: Vec<SourceRecommendation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FeedItem {
    pub share: ShareItem,
    pub sharer: PublicSource,
    /// The sharer's live assessment of the shared page, if any.
    pub assessment: Option<Assessment>,
}

/// Status of a page for `viewer` from the live assessments on it.
///
/// The viewer's own verdict wins; otherwise the trusted sources' verdicts,
/// otherwise the followed sources'. Within the governing set, unanimous
/// verdicts give that verdict and any disagreement gives a split opinion.
/// `has_questions` is left `false`; see [`Community::page_status`].
pub fn compute_page_status<'a, I>(
    viewer: &SourceId,
    assessments: I,
    relations: &RelationSet,
) -> PageStatus
where
    I: IntoIterator<Item = &'a Assessment>,
{
    let mut own = Vec::new();
    let mut trusted = Vec::new();
    let mut followed = Vec::new();
    for a in assessments {
        if a.assessor_id == *viewer {
            own.push(a.verdict);
        } else if relations.trusted.contains(&a.assessor_id) {
            trusted.push(a.verdict);
        } else if relations.followed.contains(&a.assessor_id) {
            followed.push(a.verdict);
        }
    }
    let (basis, verdicts) = [
        (Basis::Own, own),
        (Basis::Trusted, trusted),
        (Basis::Followed, followed),
    ]
    .into_iter()
    .find(|(_, v)| !v.is_empty())
    .unwrap_or((Basis::NoAssessment, Vec::new()));
    let status = match verdicts.split_first() {
        None => Status::None,
        Some((first, rest)) if rest.iter().all(|v| v == first) => match first {
            Verdict::Accurate => Status::Accurate,
            Verdict::Inaccurate => Status::Inaccurate,
        },
        Some(_) => Status::SplitOpinion,
    };
    PageStatus {
        status,
        has_questions: false,
        basis,
    }
}

/// A consistent snapshot of sources, relations and per-page content.
#[derive(Debug, Clone, Default)]
pub struct Community {
    sources: BTreeMap<SourceId, Source>,
    usernames: BTreeMap<String, SourceId>,
    relations: BTreeMap<SourceId, RelationSet>,
    assessments: BTreeMap<UrlKey, Vec<Assessment>>,
    questions: BTreeMap<UrlKey, Vec<Question>>,
    shares: Vec<ShareItem>,
}

impl Community {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_source(&mut self, source: Source) -> Result<(), ModelError> {
        if self.sources.contains_key(&source.id) {
            return Err(ModelError::Duplicate("source id"));
        }
        if self.usernames.contains_key(&source.username) {
            return Err(ModelError::Duplicate("username"));
        }
        self.usernames
            .insert(source.username.clone(), source.id.clone());
        self.sources.insert(source.id.clone(), source);
        Ok(())
    }

    pub fn source(&self, id: &SourceId) -> Option<&Source> {
        self.sources.get(id)
    }

    pub fn sources(&self) -> impl Iterator<Item = &Source> {
        self.sources.values()
    }

    fn require(&self, id: &SourceId) -> Result<&Source, ModelError> {
        self.sources
            .get(id)
            .ok_or_else(|| ModelError::NotFound(id.clone()))
    }

    /// Replaces the owner's relation set after validating it.
    pub fn set_relations(&mut self, relations: RelationSet) -> Result<(), ModelError> {
        self.require(&relations.owner_id)?;
        for id in relations.trusted.iter().chain(&relations.followed) {
            if *id == relations.owner_id {
                return Err(ModelError::SelfRelation(id.clone()));
            }
            self.require(id)?;
        }
        self.relations.insert(relations.owner_id.clone(), relations);
        Ok(())
    }

    /// The owner's relations (empty if never set).
    pub fn relations(&self, owner: &SourceId) -> RelationSet {
        self.relations
            .get(owner)
            .cloned()
            .unwrap_or_else(|| RelationSet::new(owner.clone()))
    }

    /// Number of sources that trust `id`.
    pub fn trust_count(&self, id: &SourceId) -> u32 {
        self.relations
            .values()
            .filter(|r| r.trusted.contains(id))
            .count() as u32
    }

    /// Inserts a live assessment, replacing any previous one by the same
    /// assessor on the same page.
    pub fn insert_assessment(&mut self, assessment: Assessment) {
        let list = self
            .assessments
            .entry(assessment.url_key.clone())
            .or_default();
        list.retain(|a| a.assessor_id != assessment.assessor_id);
        list.push(assessment);
    }

    /// Creates or replaces the assessor's live assessment of `url_key`.
    ///
    /// `fresh_id` is used only when the assessor has no assessment on the page
    /// yet; an update keeps the existing id and creation time.
    #[allow(clippy::too_many_arguments)]
    pub fn upsert_assessment(
        &mut self,
        assessor: &SourceId,
        url_key: &str,
        verdict: Verdict,
        rationale: Option<String>,
        policies: &PolicyTable,
        fresh_id: AssessmentId,
        now: Timestamp,
    ) -> Result<Assessment, ModelError> {
        self.require(assessor)?;
        if !policies.is_canonical(url_key) {
            return Err(ModelError::InvalidKey(url_key.to_string()));
        }
        let key = UrlKey::from_canonical(url_key);
        let previous = self
            .assessments
            .get(&key)
            .and_then(|list| list.iter().find(|a| a.assessor_id == *assessor));
        let assessment = match previous {
            Some(prev) => Assessment {
                verdict,
                rationale,
                updated_at: now.max(prev.created_at),
                ..prev.clone()
            },
            None => Assessment {
                id: fresh_id,
                assessor_id: assessor.clone(),
                url_key: key,
                verdict,
                rationale,
                created_at: now,
                updated_at: now,
            },
        };
        self.insert_assessment(assessment.clone());
        Ok(assessment)
    }

    pub fn insert_question(&mut self, question: Question) -> Result<(), ModelError> {
        self.require(&question.asker_id)?;
        question.validate()?;
        for t in question.targets.iter().flatten() {
            self.require(t)?;
        }
        self.questions
            .entry(question.url_key.clone())
            .or_default()
            .push(question);
        Ok(())
    }

    pub fn insert_share(&mut self, share: ShareItem) -> Result<(), ModelError> {
        self.require(&share.sharer_id)?;
        let assessed = self
            .assessments
            .get(&share.url_key)
            .is_some_and(|l| l.iter().any(|a| a.assessor_id == share.sharer_id));
        let asked = self
            .questions
            .get(&share.url_key)
            .is_some_and(|l| l.iter().any(|q| q.asker_id == share.sharer_id));
        if !(assessed || asked) {
            return Err(ModelError::SharePrecondition);
        }
        self.shares.push(share);
        Ok(())
    }

    /// Live assessments on a page whose assessor still exists.
    pub fn assessments_on(&self, key: &UrlKey) -> impl Iterator<Item = &Assessment> {
        self.assessments
            .get(key)
            .into_iter()
            .flatten()
            .filter(|a| self.sources.contains_key(&a.assessor_id))
    }

    pub fn questions_on(&self, key: &UrlKey) -> impl Iterator<Item = &Question> {
        self.questions
            .get(key)
            .into_iter()
            .flatten()
            .filter(|q| self.sources.contains_key(&q.asker_id))
    }

    pub fn all_assessments(&self) -> impl Iterator<Item = &Assessment> {
        self.assessments.values().flatten()
    }

    pub fn all_questions(&self) -> impl Iterator<Item = &Question> {
        self.questions.values().flatten()
    }

    pub fn all_relations(&self) -> impl Iterator<Item = &RelationSet> {
        self.relations.values()
    }

    pub fn all_shares(&self) -> &[ShareItem] {
        &self.shares
    }

    pub fn page_status(&self, viewer: &SourceId, key: &UrlKey) -> Result<PageStatus, ModelError> {
        self.require(viewer)?;
        let relations = self.relations(viewer);
        let mut status = compute_page_status(viewer, self.assessments_on(key), &relations);
        status.has_questions = !self.visible_questions(viewer, key)?.is_empty();
        Ok(status)
    }

    /// Assessments by the viewer, their trusted and their followed sources,
    /// newest first. Strangers' assessments are never included.
    pub fn visible_assessments(
        &self,
        viewer: &SourceId,
        key: &UrlKey,
    ) -> Result<Vec<AssessmentView>, ModelError> {
        self.require(viewer)?;
        let relations = self.relations(viewer);
        let mut views: Vec<AssessmentView> = self
            .assessments_on(key)
            .filter_map(|a| {
                let relation = relations.tag_of(&a.assessor_id)?;
                Some(AssessmentView {
                    assessor: PublicSource::from(&self.sources[&a.assessor_id]),
                    assessment: a.clone(),
                    relation,
                })
            })
            .collect();
        views.sort_by(|a, b| {
            b.assessment
                .updated_at
                .cmp(&a.assessment.updated_at)
                .then_with(|| a.assessment.id.cmp(&b.assessment.id))
        });
        Ok(views)
    }

    fn question_visible_to(&self, q: &Question, viewer: &SourceId) -> bool {
        if q.asker_id == *viewer {
            return true;
        }
        match &q.targets {
            Some(targets) => targets.contains(viewer),
            None => self
                .relations
                .get(&q.asker_id)
                .is_some_and(|r| r.trusted.contains(viewer)),
        }
    }

    /// Questions relayed to the viewer: untargeted questions from sources that
    /// trust the viewer, questions naming the viewer, and the viewer's own.
    pub fn visible_questions(
        &self,
        viewer: &SourceId,
        key: &UrlKey,
    ) -> Result<Vec<QuestionView>, ModelError> {
        self.require(viewer)?;
        let mut views: Vec<QuestionView> = self
            .questions_on(key)
            .filter(|q| self.question_visible_to(q, viewer))
            .map(|q| QuestionView {
                id: q.id.clone(),
                url_key: q.url_key.clone(),
                asker: (!q.anonymous).then(|| PublicSource::from(&self.sources[&q.asker_id])),
                body: q.body.clone(),
                anonymous: q.anonymous,
                own: q.asker_id == *viewer,
                created_at: q.created_at,
            })
            .collect();
        views.sort_by(|a, b| {
            b.created_at
                .cmp(&a.created_at)
                .then_with(|| a.id.cmp(&b.id))
        });
        Ok(views)
    }

    /// Assessors of the page the viewer neither trusts nor follows, most
    /// trusted platform-wide first.
    pub fn recommend_sources(
        &self,
        viewer: &SourceId,
        key: &UrlKey,
        limit: usize,
    ) -> Result<Vec<SourceRecommendation>, ModelError> {
        self.require(viewer)?;
        let relations = self.relations(viewer);
        let candidates: BTreeSet<&SourceId> = self
            .assessments_on(key)
            .map(|a| &a.assessor_id)
            .filter(|id| relations.tag_of(id).is_none())
            .collect();
        let mut ranked: Vec<(u32, &Source)> = candidates
            .into_iter()
            .map(|id| (self.trust_count(id), &self.sources[id]))
            .collect();
        ranked.sort_by(|(ca, a), (cb, b)| {
            cb.cmp(ca)
                .then_with(|| a.created_at.cmp(&b.created_at))
                .then_with(|| a.id.cmp(&b.id))
        });
        Ok(ranked
            .into_iter()
            .take(limit)
            .map(|(count, s)| SourceRecommendation {
                source: PublicSource::from(s),
                platform_trust_count: count,
            })
            .collect())
    }

    /// Page status for every requested key.
    pub fn link_statuses<'a, I>(
        &self,
        viewer: &SourceId,
        keys: I,
    ) -> Result<BTreeMap<UrlKey, PageStatus>, ModelError>
    where
        I: IntoIterator<Item = &'a UrlKey>,
    {
        self.require(viewer)?;
        keys.into_iter()
            .map(|k| Ok((k.clone(), self.page_status(viewer, k)?)))
            .collect()
    }

    pub fn page_report(
        &self,
        viewer: &SourceId,
        key: &UrlKey,
        recommendation_limit: usize,
    ) -> Result<PageReport, ModelError> {
        let status = self.page_status(viewer, key)?;
        Ok(PageReport {
            url_key: key.clone(),
            status: status.status,
            basis: status.basis,
            has_questions: status.has_questions,
            assessments: self.visible_assessments(viewer, key)?,
            questions: self.visible_questions(viewer, key)?,
            recommendations: self.recommend_sources(viewer, key, recommendation_limit)?,
        })
    }

    /// Shares by sources the viewer follows, newest first.
    pub fn feed(&self, viewer: &SourceId) -> Result<Vec<FeedItem>, ModelError> {
        self.require(viewer)?;
        let relations = self.relations(viewer);
        let mut items: Vec<FeedItem> = self
            .shares
            .iter()
            .filter(|s| relations.followed.contains(&s.sharer_id))
            .filter_map(|s| {
                let sharer = self.sources.get(&s.sharer_id)?;
                Some(FeedItem {
                    share: s.clone(),
                    sharer: PublicSource::from(sharer),
                    assessment: self
                        .assessments_on(&s.url_key)
                        .find(|a| a.assessor_id == s.sharer_id)
                        .cloned(),
                })
            })
            .collect();
        items.sort_by(|a, b| {
            b.share
                .created_at
                .cmp(&a.share.created_at)
                .then_with(|| b.share.id.cmp(&a.share.id))
        });
        Ok(items)
    }
}

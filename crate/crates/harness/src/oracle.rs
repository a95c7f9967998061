//! A second, deliberately naive statement of the per-viewer rules.
//!
//! Nothing here calls into the core model's evaluation code. The rules are
//! restated from their plain description and evaluated by brute force over
//! the raw world vectors, so disagreement with the core points at a bug in
//! one of the two.

use std::collections::BTreeSet;

use trustnet_core::{Basis, PageStatus, QuestionId, SourceId, Status, UrlKey, Verdict};

use crate::world::World;

fn trusts(world: &World, owner: &SourceId, other: &SourceId) -> bool {
    world
        .relations
        .iter()
        .any(|r| r.owner_id == *owner && r.trusted.contains(other))
}

fn follows(world: &World, owner: &SourceId, other: &SourceId) -> bool {
    world
        .relations
        .iter()
        .any(|r| r.owner_id == *owner && r.followed.contains(other))
}

/// Questions on `key` that `viewer` may see.
///
/// The asker always sees their own question. Otherwise an explicitly
/// targeted question reaches exactly its targets, and an untargeted one
/// reaches everyone the asker trusts.
pub fn oracle_visible_questions(
    viewer: &SourceId,
    key: &UrlKey,
    world: &World,
) -> BTreeSet<QuestionId> {
    let mut out = BTreeSet::new();
    for q in &world.questions {
        if q.url_key != *key {
            continue;
        }
        let visible = if q.asker_id == *viewer {
            true
        } else {
            match &q.targets {
                Some(targets) => targets.contains(viewer),
                None => trusts(world, &q.asker_id, viewer),
            }
        };
        if visible {
            out.insert(q.id.clone());
        }
    }
    out
}

/// Page status by explicit enumeration.
///
/// Three verdict lists are gathered independently: the viewer's own, those
/// of sources the viewer trusts, and those of sources the viewer follows.
/// The first non-empty list in that order decides; if every verdict in it
/// agrees the page takes that verdict, otherwise it is a split opinion.
pub fn oracle_status(viewer: &SourceId, key: &UrlKey, world: &World) -> PageStatus {
    let on_page: Vec<_> = world
        .assessments
        .iter()
        .filter(|a| a.url_key == *key)
        .collect();

    let own: Vec<Verdict> = on_page
        .iter()
        .filter(|a| a.assessor_id == *viewer)
        .map(|a| a.verdict)
        .collect();
    let trusted: Vec<Verdict> = on_page
        .iter()
        .filter(|a| a.assessor_id != *viewer && trusts(world, viewer, &a.assessor_id))
        .map(|a| a.verdict)
        .collect();
    // a source both trusted and followed counts once, as trusted
    let followed: Vec<Verdict> = on_page
        .iter()
        .filter(|a| {
            a.assessor_id != *viewer
                && !trusts(world, viewer, &a.assessor_id)
                && follows(world, viewer, &a.assessor_id)
        })
        .map(|a| a.verdict)
        .collect();

    let (basis, verdicts) = if !own.is_empty() {
        (Basis::Own, own)
    } else if !trusted.is_empty() {
        (Basis::Trusted, trusted)
    } else if !followed.is_empty() {
        (Basis::Followed, followed)
    } else {
        (Basis::NoAssessment, Vec::new())
    };

    let accurate = verdicts.iter().filter(|v| **v == Verdict::Accurate).count();
    let inaccurate = verdicts.len() - accurate;
    let status = match (accurate, inaccurate) {
        (0, 0) => Status::None,
        (_, 0) => Status::Accurate,
        (0, _) => Status::Inaccurate,
        _ => Status::SplitOpinion,
    };

    PageStatus {
        status,
        has_questions: !oracle_visible_questions(viewer, key, world).is_empty(),
        basis,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{at, page, source, source_id};
    use trustnet_core::{Assessment, Question, RelationSet};

    fn world(n: usize) -> World {
        World {
            sources: (0..n).map(source).collect(),
            ..World::default()
        }
    }

    fn assess(w: &mut World, who: usize, v: Verdict) {
        w.assessments.push(Assessment {
            id: format!("a{}", w.assessments.len()).as_str().into(),
            assessor_id: source_id(who),
            url_key: page(0),
            verdict: v,
            rationale: None,
            created_at: at(10),
            updated_at: at(10),
        });
    }

    fn relate(w: &mut World, owner: usize, trusted: &[usize], followed: &[usize]) {
        let mut r = RelationSet::new(source_id(owner));
        r.trusted = trusted.iter().map(|&i| source_id(i)).collect();
        r.followed = followed.iter().map(|&i| source_id(i)).collect();
        w.relations.push(r);
    }

    fn status(w: &World) -> (Status, Basis) {
        let s = oracle_status(&source_id(0), &page(0), w);
        (s.status, s.basis)
    }

    #[test]
    fn unanimous_trusted() {
        let mut w = world(3);
        relate(&mut w, 0, &[1, 2], &[]);
        assess(&mut w, 1, Verdict::Accurate);
        assess(&mut w, 2, Verdict::Accurate);
        assert_eq!(status(&w), (Status::Accurate, Basis::Trusted));
    }

    #[test]
    fn mixed_trusted_is_split() {
        let mut w = world(3);
        relate(&mut w, 0, &[1, 2], &[]);
        assess(&mut w, 1, Verdict::Accurate);
        assess(&mut w, 2, Verdict::Inaccurate);
        assert_eq!(status(&w), (Status::SplitOpinion, Basis::Trusted));
    }

    #[test]
    fn own_verdict_wins() {
        let mut w = world(3);
        relate(&mut w, 0, &[1, 2], &[]);
        assess(&mut w, 0, Verdict::Inaccurate);
        assess(&mut w, 1, Verdict::Accurate);
        assess(&mut w, 2, Verdict::Accurate);
        assert_eq!(status(&w), (Status::Inaccurate, Basis::Own));
    }

    #[test]
    fn falls_back_to_followed() {
        let mut w = world(3);
        relate(&mut w, 0, &[1], &[2]);
        assess(&mut w, 2, Verdict::Inaccurate);
        assert_eq!(status(&w), (Status::Inaccurate, Basis::Followed));
    }

    #[test]
    fn strangers_do_not_count() {
        let mut w = world(2);
        assess(&mut w, 1, Verdict::Inaccurate);
        assert_eq!(status(&w), (Status::None, Basis::NoAssessment));
    }

    #[test]
    fn question_reach() {
        let mut w = world(3);
        relate(&mut w, 1, &[0], &[]);
        w.questions.push(Question {
            id: "q0".into(),
            asker_id: source_id(1),
            url_key: page(0),
            body: None,
            anonymous: true,
            targets: None,
            created_at: at(5),
        });
        w.questions.push(Question {
            id: "q1".into(),
            asker_id: source_id(2),
            url_key: page(0),
            body: None,
            anonymous: false,
            targets: Some([source_id(1)].into()),
            created_at: at(6),
        });
        let seen = |v: usize| oracle_visible_questions(&source_id(v), &page(0), &w);
        assert_eq!(seen(0), ["q0".into()].into());
        assert_eq!(seen(1), ["q0".into(), "q1".into()].into());
        assert_eq!(seen(2), ["q1".into()].into());
    }
}

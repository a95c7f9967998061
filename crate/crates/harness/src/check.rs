//! Differential check of the core model against the oracle.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use serde::Serialize;
use trustnet_core::{
    compute_page_status, Assessment, Question, RelationSet, SourceId, UrlKey, Verdict,
};

use crate::oracle::{oracle_status, oracle_visible_questions};
use crate::world::{at, gen_world, page, source, source_id, World, WorldParams};

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Mismatch {
    pub world: String,
    pub viewer: SourceId,
    pub url_key: UrlKey,
    pub detail: String,
}

#[derive(Debug, Clone, Default, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleReport {
    pub worlds: usize,
    pub comparisons: usize,
    pub mismatches: Vec<Mismatch>,
    #[serde(with = "secs")]
    pub elapsed: Duration,
}

mod secs {
    pub fn serialize<S: serde::Serializer>(
        d: &std::time::Duration,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty() && self.worlds > 0
    }

    pub fn merge(&mut self, other: OracleReport) {
        self.worlds += other.worlds;
        self.comparisons += other.comparisons;
        self.mismatches.extend(other.mismatches);
        self.elapsed += other.elapsed;
    }
}

/// Compares every viewer on every page of `world`. The core model must agree
/// with the oracle on status, basis and question flag; on which questions
/// the viewer sees; and anonymous questions must not carry an asker. Batch
/// link statuses must equal per-page statuses.
pub fn check_world(label: &str, world: &World, report: &mut OracleReport) {
    report.worlds += 1;
    let mut miss = |viewer: &SourceId, key: &UrlKey, detail: String| {
        report.mismatches.push(Mismatch {
            world: label.to_string(),
            viewer: viewer.clone(),
            url_key: key.clone(),
            detail,
        })
    };
    let community = match world.community() {
        Ok(c) => c,
        Err(e) => {
            miss(
                &SourceId::new(""),
                &UrlKey::from_canonical(""),
                format!("world rejected by core: {e}"),
            );
            return;
        }
    };
    // an untouched page rides along so the empty case is always compared
    let mut pages = world.pages();
    pages.push(page(999));
    for viewer in world.sources.iter().map(|s| &s.id) {
        let batch = match community.link_statuses(viewer, pages.iter()) {
            Ok(b) => b,
            Err(e) => {
                miss(
                    viewer,
                    &UrlKey::from_canonical(""),
                    format!("link_statuses failed: {e}"),
                );
                continue;
            }
        };
        for key in &pages {
            report.comparisons += 1;
            let expected = oracle_status(viewer, key, world);
            let actual = match community.page_status(viewer, key) {
                Ok(s) => s,
                Err(e) => {
                    miss(viewer, key, format!("page_status failed: {e}"));
                    continue;
                }
            };
            if actual != expected {
                miss(
                    viewer,
                    key,
                    format!("page_status {actual:?}, oracle {expected:?}"),
                );
            }
            let pure = compute_page_status(
                viewer,
                community.assessments_on(key),
                &community.relations(viewer),
            );
            if (pure.status, pure.basis) != (expected.status, expected.basis) {
                miss(
                    viewer,
                    key,
                    format!("compute_page_status {pure:?}, oracle {expected:?}"),
                );
            }
            if batch.get(key) != Some(&actual) {
                miss(
                    viewer,
                    key,
                    format!("link_statuses {:?}, page_status {actual:?}", batch.get(key)),
                );
            }

            let views = community.visible_questions(viewer, key).unwrap_or_default();
            let ids: BTreeSet<_> = views.iter().map(|q| q.id.clone()).collect();
            let expected_ids = oracle_visible_questions(viewer, key, world);
            if ids != expected_ids {
                miss(
                    viewer,
                    key,
                    format!("visible questions {ids:?}, oracle {expected_ids:?}"),
                );
            }
            for view in views.iter().filter(|q| q.anonymous && q.asker.is_some()) {
                miss(
                    viewer,
                    key,
                    format!("anonymous question {} exposes its asker", view.id),
                );
            }
        }
    }
}

fn key() -> UrlKey {
    page(0)
}

fn relation_world(n: usize, viewer_rel: &[u8]) -> World {
    let mut rel = RelationSet::new(source_id(0));
    for (j, &r) in viewer_rel.iter().enumerate() {
        let other = source_id(j + 1);
        if r & 1 != 0 {
            rel.trusted.insert(other.clone());
        }
        if r & 2 != 0 {
            rel.followed.insert(other);
        }
    }
    World {
        sources: (0..n).map(source).collect(),
        relations: vec![rel],
        ..World::default()
    }
}

/// Every combination of `digits` base-`base` digits.
fn odometer(digits: usize, base: u8) -> impl Iterator<Item = Vec<u8>> {
    let total = (base as usize).pow(digits as u32);
    (0..total).map(move |mut i| {
        (0..digits)
            .map(|_| {
                let d = (i % base as usize) as u8;
                i /= base as usize;
                d
            })
            .collect()
    })
}

/// All worlds with up to `max_sources` sources and up to `max_assessments`
/// assessments on one page.
///
/// Status worlds: source 0 relates to every other source in one of four
/// ways (none, trusted, followed, both), and every source independently has
/// no assessment or one of the two verdicts, at most `max_assessments` in
/// total. Question worlds: one question with every choice of asker, asker's
/// trusted set, explicit targets and anonymity. Every source acts as viewer.
pub fn exhaustive(max_sources: usize, max_assessments: usize) -> OracleReport {
    let started = Instant::now();
    let mut report = OracleReport::default();
    for n in 1..=max_sources {
        for rel in odometer(n - 1, 4) {
            for verdicts in odometer(n, 3) {
                if verdicts.iter().filter(|&&v| v != 0).count() > max_assessments {
                    continue;
                }
                let mut world = relation_world(n, &rel);
                for (i, &v) in verdicts.iter().enumerate() {
                    if v == 0 {
                        continue;
                    }
                    world.assessments.push(Assessment {
                        id: format!("a{i}").as_str().into(),
                        assessor_id: source_id(i),
                        url_key: key(),
                        verdict: if v == 1 {
                            Verdict::Accurate
                        } else {
                            Verdict::Inaccurate
                        },
                        rationale: None,
                        created_at: at(100 + i as i64),
                        updated_at: at(100 + i as i64),
                    });
                }
                check_world(
                    &format!("status n={n} rel={rel:?} verdicts={verdicts:?}"),
                    &world,
                    &mut report,
                );
            }
        }
        for asker in 0..n {
            let others: Vec<usize> = (0..n).filter(|&j| j != asker).collect();
            for trust_mask in 0..(1usize << others.len()) {
                for target_mask in 0..(1usize << others.len()) {
                    for anonymous in [false, true] {
                        let pick = |mask: usize| -> BTreeSet<SourceId> {
                            others
                                .iter()
                                .enumerate()
                                .filter(|(b, _)| mask & (1 << b) != 0)
                                .map(|(_, &j)| source_id(j))
                                .collect()
                        };
                        let mut rel = RelationSet::new(source_id(asker));
                        rel.trusted = pick(trust_mask);
                        let world = World {
                            sources: (0..n).map(source).collect(),
                            relations: vec![rel],
                            questions: vec![Question {
                                id: "q0".into(),
                                asker_id: source_id(asker),
                                url_key: key(),
                                body: Some("source?".into()),
                                anonymous,
                                // mask 0 stands for "no explicit targets"
                                targets: (target_mask != 0).then(|| pick(target_mask)),
                                created_at: at(50),
                            }],
                            ..World::default()
                        };
                        check_world(
                            &format!("question n={n} asker={asker} trust={trust_mask:b} targets={target_mask:b} anon={anonymous}"),
                            &world,
                            &mut report,
                        );
                    }
                }
            }
        }
    }
    report.elapsed = started.elapsed();
    report
}

/// `count` generated worlds from consecutive seeds starting at `first_seed`.
pub fn random_worlds(first_seed: u64, count: usize, params: &WorldParams) -> OracleReport {
    let started = Instant::now();
    let mut report = OracleReport::default();
    for seed in first_seed..first_seed + count as u64 {
        check_world(
            &format!("seed {seed}"),
            &gen_world(seed, params),
            &mut report,
        );
    }
    report.elapsed = started.elapsed();
    report
}

/// The exhaustive small-world sweep plus `random` seeded worlds.
pub fn check_oracle(first_seed: u64, random: usize) -> OracleReport {
    let mut report = exhaustive(4, 3);
    report.merge(random_worlds(first_seed, random, &WorldParams::default()));
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odometer_covers_everything() {
        let all: Vec<_> = odometer(3, 4).collect();
        assert_eq!(all.len(), 64);
        assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), 64);
        assert_eq!(odometer(0, 3).count(), 1);
    }

    #[test]
    fn small_sweep_agrees() {
        let r = exhaustive(3, 3);
        assert!(
            r.passed(),
            "{:#?}",
            &r.mismatches[..r.mismatches.len().min(5)]
        );
        assert!(r.worlds > 400);
    }

    #[test]
    fn a_corrupted_world_is_reported() {
        // an assessment by an unknown viewer id is ignored by both sides, but a
        // self-trust edge is rejected by the core and must surface as a mismatch
        let mut world = relation_world(2, &[1]);
        world.relations[0].trusted.insert(source_id(0));
        let mut report = OracleReport::default();
        check_world("bad", &world, &mut report);
        assert_eq!(report.mismatches.len(), 1);
        assert!(report.mismatches[0].detail.contains("rejected"));
    }
}

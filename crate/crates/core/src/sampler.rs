//! Training and evaluation instances: (sentence, candidate label) pairs
//! with per-level targets.
//!
//! Every gold label of a sample yields a positive pair and seeds its own
//! round of negatives, drawn per tier relative to that gold label (the
//! anchor) and never from the sample's gold set.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::augment::{deform, AugmentConfig, Resources};
use crate::corpus::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::model::LossItem;
use crate::taxonomy::{LabelId, RelationTier, Taxonomy};
use crate::util::{derive_seed, pick, sample_distinct, seeded, SeededRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub origin_id: String,
    pub label: LabelId,
    pub tier: RelationTier,
    pub weight: f64,
    /// `[yT3, yT2, yT1]`
    pub targets: [u8; 3],
    pub tokens: Vec<String>,
    /// The gold label the tier was computed against; `None` for a
    /// real-simulation row of a sample with no gold labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<LabelId>,
}

impl TrainingInstance {
    fn new(sample: &Sample, tokens: Vec<String>, label: LabelId, tier: RelationTier, anchor: Option<LabelId>) -> Self {
        TrainingInstance {
            origin_id: sample.id.clone(),
            label,
            tier,
            weight: tier.weight(),
            targets: tier.targets(),
            tokens,
            anchor,
        }
    }

    pub fn is_positive(&self) -> bool {
        self.tier == RelationTier::Positive
    }
}

impl LossItem for TrainingInstance {
    fn parts(&self) -> (&[String], &LabelId, [u8; 3], f64) {
        (&self.tokens, &self.label, self.targets, self.weight)
    }
}

/// Negatives generated per positive, by tier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioConfig {
    pub mildly: usize,
    pub negative: usize,
    pub strictly: usize,
}

/// Ratio triples by total, as used for the negative-ratio sweep.
pub const SWEEP_TABLE: [(usize, RatioConfig); 13] = [
    (0, RatioConfig::new(0, 0, 0)),
    (5, RatioConfig::new(1, 2, 2)),
    (10, RatioConfig::new(2, 2, 6)),
    (15, RatioConfig::new(3, 4, 8)),
    (20, RatioConfig::new(4, 7, 9)),
    (25, RatioConfig::new(5, 8, 12)),
    (30, RatioConfig::new(5, 11, 14)),
    (35, RatioConfig::new(5, 11, 19)),
    (40, RatioConfig::new(5, 11, 24)),
    (45, RatioConfig::new(5, 10, 30)),
    (50, RatioConfig::new(5, 12, 33)),
    (55, RatioConfig::new(5, 13, 37)),
    (60, RatioConfig::new(5, 14, 41)),
];

impl Default for RatioConfig {
    fn default() -> Self {
        RatioConfig::new(5, 11, 24)
    }
}

impl RatioConfig {
    pub const fn new(mildly: usize, negative: usize, strictly: usize) -> RatioConfig {
        RatioConfig {
            mildly,
            negative,
            strictly,
        }
    }

    pub fn total(&self) -> usize {
        self.mildly + self.negative + self.strictly
    }

    pub fn quota(&self, tier: RelationTier) -> usize {
        match tier {
            RelationTier::Positive => 0,
            RelationTier::MildlyNegative => self.mildly,
            RelationTier::Negative => self.negative,
            RelationTier::StrictlyNegative => self.strictly,
        }
    }

    /// The sweep triple for `total`, if the table has one.
    pub fn for_total(total: usize) -> Option<RatioConfig> {
        SWEEP_TABLE.iter().find(|(t, _)| *t == total).map(|(_, r)| *r)
    }
}

impl std::str::FromStr for RatioConfig {
    type Err = Error;

    /// `m,n,s` or `m:n:s`.
    fn from_str(s: &str) -> Result<RatioConfig> {
        let parts: Vec<&str> = s.split([',', ':']).map(str::trim).collect();
        let bad = || Error::invalid(format!("ratio `{s}` is not three counts like 5,11,24"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n: Vec<usize> = parts.iter().map(|p| p.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        Ok(RatioConfig::new(n[0], n[1], n[2]))
    }
}

const NEGATIVE_TIERS: [RelationTier; 3] = [
    RelationTier::MildlyNegative,
    RelationTier::Negative,
    RelationTier::StrictlyNegative,
];

/// What a generation run produced.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SamplerReport {
    pub positives: usize,
    /// Instance counts by the tier actually emitted.
    pub per_tier: BTreeMap<RelationTier, usize>,
    /// Negatives drawn from a stricter tier than requested because the
    /// requested tier had no candidates.
    pub substitutions: usize,
    /// Gold labels skipped because they are not among the candidate labels.
    pub untrained_gold: usize,
}

impl SamplerReport {
    fn merge(&mut self, other: &SamplerReport) {
        self.positives += other.positives;
        for (t, c) in &other.per_tier {
            *self.per_tier.entry(*t).or_insert(0) += c;
        }
        self.substitutions += other.substitutions;
        self.untrained_gold += other.untrained_gold;
    }

    pub fn count(&self, tier: RelationTier) -> usize {
        self.per_tier.get(&tier).copied().unwrap_or(0)
    }
}

/// Deforms negative text when set.
pub struct Augmenter<'a> {
    pub config: &'a AugmentConfig,
    pub resources: &'a Resources,
}

/// Positives plus tiered negatives for every (sample, gold label) pair.
///
/// `labels` is the candidate set (the trained labels). Negative tokens are
/// deformed when `augment` is given.
pub fn generate_training_instances(
    corpus: &Corpus,
    tax: &Taxonomy,
    labels: &[LabelId],
    ratios: RatioConfig,
    augment: Option<Augmenter<'_>>,
    seed: u64,
) -> Result<(Vec<TrainingInstance>, SamplerReport)> {
    if let Some(a) = &augment {
        a.config.validate()?;
    }
    for l in labels {
        tax.node(l)?;
    }
    let per_sample = crate::par::try_map(corpus.samples(), |s| {
        let mut rng = seeded(derive_seed(seed, &s.id));
        instances_for(s, tax, labels, ratios, augment.as_ref(), &mut rng)
    })?;
    let mut all = Vec::new();
    let mut report = SamplerReport::default();
    for (inst, r) in per_sample {
        all.extend(inst);
        report.merge(&r);
    }
    Ok((all, report))
}

/// The `test_set` protocol expansion: the same generator with evaluation
/// text left untouched.
pub fn make_test_set_instances(
    corpus: &Corpus,
    tax: &Taxonomy,
    labels: &[LabelId],
    ratios: RatioConfig,
    seed: u64,
) -> Result<(Vec<TrainingInstance>, SamplerReport)> {
    generate_training_instances(corpus, tax, labels, ratios, None, seed)
}

fn instances_for(
    s: &Sample,
    tax: &Taxonomy,
    labels: &[LabelId],
    ratios: RatioConfig,
    augment: Option<&Augmenter<'_>>,
    rng: &mut SeededRng,
) -> Result<(Vec<TrainingInstance>, SamplerReport)> {
    let gold: HashSet<&LabelId> = s.labels.iter().collect();
    let candidates: Vec<&LabelId> = labels.iter().filter(|l| !gold.contains(l)).collect();
    let mut out = Vec::with_capacity(s.labels.len() * (1 + ratios.total()));
    let mut report = SamplerReport::default();
    for anchor in &s.labels {
        if !labels.contains(anchor) {
            report.untrained_gold += 1;
            continue;
        }
        out.push(TrainingInstance::new(
            s,
            s.tokens.clone(),
            anchor.clone(),
            RelationTier::Positive,
            Some(anchor.clone()),
        ));
        report.positives += 1;
        *report.per_tier.entry(RelationTier::Positive).or_insert(0) += 1;

        let mut pools: BTreeMap<RelationTier, Vec<&LabelId>> = BTreeMap::new();
        for c in &candidates {
            let tier = tax.relation(anchor, c)?;
            pools.entry(tier).or_default().push(c);
        }
        // quotas of empty tiers move to the next stricter tier
        let mut carry = 0usize;
        for tier in NEGATIVE_TIERS {
            let want = ratios.quota(tier) + carry;
            let pool = pools.get(&tier).map(Vec::as_slice).unwrap_or(&[]);
            if want == 0 {
                continue;
            }
            if pool.is_empty() {
                carry = want;
                continue;
            }
            report.substitutions += carry;
            carry = 0;
            let picks: Vec<usize> = if pool.len() >= want {
                sample_distinct(rng, pool.len(), want)
            } else {
                (0..want).map(|_| pick(rng, pool.len())).collect()
            };
            for p in picks {
                let tokens = match augment {
                    Some(a) => deform(&s.tokens, a.config, a.resources, rng),
                    None => s.tokens.clone(),
                };
                out.push(TrainingInstance::new(s, tokens, pool[p].clone(), tier, Some(anchor.clone())));
                *report.per_tier.entry(tier).or_insert(0) += 1;
            }
        }
        if carry > 0 {
            return Err(Error::TierExhausted {
                tier: RelationTier::StrictlyNegative,
                anchor: anchor.to_string(),
            });
        }
    }
    Ok((out, report))
}

/// The `real_simulation` expansion: every sample against every label in
/// `labels`. A non-gold row's tier is the closest relation between the
/// label and any of the sample's gold labels.
pub fn expand_real_simulation(corpus: &Corpus, tax: &Taxonomy, labels: &[LabelId]) -> Result<Vec<TrainingInstance>> {
    for l in labels {
        tax.node(l)?;
    }
    let mut out = Vec::with_capacity(corpus.len() * labels.len());
    for s in corpus.iter() {
        for l in labels {
            let mut best: Option<(RelationTier, &LabelId)> = None;
            for g in &s.labels {
                if !tax.contains(g) {
                    continue;
                }
                let r = tax.relation(g, l)?;
                if best.is_none_or(|(b, _)| r < b) {
                    best = Some((r, g));
                }
            }
            let (tier, anchor) = match best {
                Some((r, g)) => (r, Some(g.clone())),
                None => (RelationTier::StrictlyNegative, None),
            };
            out.push(TrainingInstance::new(s, s.tokens.clone(), l.clone(), tier, anchor));
        }
    }
    Ok(out)
}

pub fn write_instances_jsonl<W: Write>(mut w: W, instances: &[TrainingInstance]) -> Result<()> {
    for i in instances {
        serde_json::to_writer(&mut w, i)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> LabelId {
        LabelId::from(s)
    }

    fn corpus(rows: &[(&str, &[&str])]) -> Corpus {
        Corpus::new(
            rows.iter()
                .map(|(i, ls)| Sample::new(*i, "we sell the cow for school fees", ls.iter().map(|l| id(l)).collect()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn sweep_table_rows() {
        assert_eq!(RatioConfig::for_total(0), Some(RatioConfig::new(0, 0, 0)));
        assert_eq!(RatioConfig::for_total(40), Some(RatioConfig::default()));
        for (t, r) in SWEEP_TABLE {
            assert_eq!(r.total(), t);
        }
        assert_eq!("5,11,24".parse::<RatioConfig>().unwrap(), RatioConfig::default());
        assert!("5,11".parse::<RatioConfig>().is_err());
    }

    #[test]
    fn positives_only() {
        let tax = Taxonomy::bundled();
        let labels: Vec<LabelId> = tax.t3_ids().cloned().collect();
        let c = corpus(&[("a", &["faith"]), ("b", &["aspiration", "reputation"])]);
        let (inst, r) = generate_training_instances(&c, &tax, &labels, RatioConfig::new(0, 0, 0), None, 1).unwrap();
        assert_eq!(inst.len(), 3);
        assert_eq!(r.positives, 3);
        assert!(inst.iter().all(|i| i.is_positive()));
    }

    #[test]
    fn test_set_counts() {
        let tax = Taxonomy::bundled();
        let labels: Vec<LabelId> = tax.t3_ids().cloned().collect();
        let rows: Vec<(String, [&str; 1])> = (0..10).map(|i| (format!("s{i}"), ["aspiration"])).collect();
        let c = Corpus::new(
            rows.iter()
                .map(|(i, ls)| Sample::new(i.as_str(), "we sell the cow", ls.iter().map(|l| id(l)).collect()))
                .collect(),
        )
        .unwrap();
        let (inst, r) = make_test_set_instances(&c, &tax, &labels, RatioConfig::default(), 3).unwrap();
        assert_eq!(inst.len(), 410);
        assert_eq!(r.count(RelationTier::MildlyNegative), 50);
        assert_eq!(r.count(RelationTier::Negative), 110);
        assert_eq!(r.count(RelationTier::StrictlyNegative), 240);
        // evaluation text is never deformed
        assert!(inst.iter().all(|i| i.tokens == c.samples()[0].tokens));
        let (again, _) = make_test_set_instances(&c, &tax, &labels, RatioConfig::default(), 3).unwrap();
        assert_eq!(inst, again);
    }

    #[test]
    fn exhausted_tier_falls_back() {
        // faith is alone in its group: its mildly negative quota moves on
        let tax = Taxonomy::bundled();
        let labels: Vec<LabelId> = tax.t3_ids().cloned().collect();
        let c = corpus(&[("a", &["faith"])]);
        let (inst, r) = generate_training_instances(&c, &tax, &labels, RatioConfig::new(2, 0, 0), None, 1).unwrap();
        assert_eq!(inst.len(), 3);
        assert_eq!(r.substitutions, 2);
        assert_eq!(r.count(RelationTier::MildlyNegative), 0);
    }

    #[test]
    fn real_simulation_expansion() {
        let tax = Taxonomy::bundled();
        let labels: Vec<LabelId> = tax.t3_ids().skip(7).cloned().collect();
        let c = corpus(&[("a", &["aspiration", "reputation"])]);
        let inst = expand_real_simulation(&c, &tax, &labels).unwrap();
        assert_eq!(inst.len(), 50);
        assert_eq!(inst.iter().filter(|i| i.is_positive()).count(), 2);
        // gold label outside the candidate set: every row is negative
        let c = corpus(&[("b", &["faith"])]);
        let few: Vec<LabelId> = labels.iter().filter(|l| l.as_str() != "faith").cloned().collect();
        let inst = expand_real_simulation(&c, &tax, &few).unwrap();
        assert!(inst.iter().all(|i| !i.is_positive()));
    }

    #[test]
    fn dump_round_trips() {
        let tax = Taxonomy::bundled();
        let labels: Vec<LabelId> = tax.t3_ids().cloned().collect();
        let c = corpus(&[("a", &["faith"])]);
        let (inst, _) = make_test_set_instances(&c, &tax, &labels, RatioConfig::new(0, 1, 1), 9).unwrap();
        let mut buf = Vec::new();
        write_instances_jsonl(&mut buf, &inst).unwrap();
        let back: Vec<TrainingInstance> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(back, inst);
    }
}
